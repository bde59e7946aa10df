// pcs: mock Provisioning Certification Service and its admin commands.

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "ppml/pcs_service.hpp"

using namespace ppml;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Mock Provisioning Certification Service"};
    app.require_subcommand(1);

    std::string db_path, listen = "127.0.0.1:7000", pcs = "127.0.0.1:7000", out_path, platform_id;
    std::uint32_t tcb = 1;

    auto* serve = app.add_subcommand("serve", "Serve the database until SIGINT/SIGTERM");
    serve->add_option("--db", db_path, "JSON database, created if missing")->required();
    serve->add_option("--listen", listen, "host:port")->capture_default_str();

    auto* reg = app.add_subcommand("register", "Register a new platform");
    reg->add_option("--pcs", pcs, "PCS address")->capture_default_str();
    reg->add_option("--tcb", tcb, "Platform TCB level")->capture_default_str();
    reg->add_option("--out", out_path, "Where to write the platform identity and chain")->required();

    auto* rev = app.add_subcommand("revoke", "Revoke a platform");
    rev->add_option("platform_id", platform_id, "Platform id (hex)")->required();
    rev->add_option("--pcs", pcs, "PCS address")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*serve) {
            auto signals = cli::block_termination_signals();
            auto db = fs::exists(db_path) ? attest::PcsDatabase::load(db_path)
                                          : std::make_unique<attest::PcsDatabase>(attest::system_now());
            db->save(db_path);
            attest::PcsService service(*db, attest::system_now, fs::path(db_path));
            wire::ConnectionServer server(
                wire::parse_endpoint(listen), [&](wire::Connection& c) { service.handle(c); },
                [](const std::string& peer, const std::exception& e) {
                    std::cerr << "pcs: " << peer << ": " << e.what() << std::endl;
                });
            std::cout << "pcs listening on " << server.endpoint().to_string() << ", root "
                      << db->root_public_key().hex() << std::endl;
            cli::wait_for_signal(signals);
            server.stop();
        } else if (*reg) {
            auto r = attest::PcsClient(wire::parse_endpoint(pcs)).register_platform(tcb);
            nlohmann::json j{{"identity", r.identity}, {"chain", r.chain}};
            cli::write_text(out_path, j.dump(2) + "\n");
            std::cout << r.identity.platform_id.hex() << "\n";
        } else if (*rev) {
            auto id = cli::parse_hex_arg<attest::PlatformId>("platform_id", platform_id);
            auto crl = attest::PcsClient(wire::parse_endpoint(pcs)).revoke(id);
            std::cout << "revoked; CRL sequence " << crl.sequence << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "pcs: " << e.what() << "\n";
        return cli::kExitOther;
    }
    return cli::kExitOk;
}
