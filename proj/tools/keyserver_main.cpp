// keyserver: the user's secret provisioning service and its vault.

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "ppml/enclave_host.hpp"
#include "ppml/pcs_service.hpp"
#include "ppml/protected_fs.hpp"
#include "ppml/provisioning.hpp"

using namespace ppml;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Secret provisioning key server"};
    app.require_subcommand(1);

    std::string vault_path, passphrase, listen = "127.0.0.1:7100", pin_out, pcs = "127.0.0.1:7000", audit;
    std::string mr_signer_hex = enclave::demo_signer().mr_signer.hex();
    std::uint32_t session_min_tcb = 0;

    std::string name, secret_hex, mr_enclave_hex, policy_signer_hex;
    bool random_secret = false;
    std::uint32_t min_svn = 0, min_tcb = 0;

    auto* serve = app.add_subcommand("serve", "Serve key requests until SIGINT/SIGTERM");
    serve->add_option("--vault", vault_path, "Vault file")->required()->check(CLI::ExistingFile);
    serve->add_option("--passphrase", passphrase, "Vault passphrase (or PPML_VAULT_PASSPHRASE)");
    serve->add_option("--listen", listen, "host:port")->capture_default_str();
    serve->add_option("--pin-out", pin_out, "Where to write the verifier public key")->required();
    serve->add_option("--pcs", pcs, "PCS address for the root key and CRL")->capture_default_str();
    serve->add_option("--mrsigner", mr_signer_hex, "Session policy: required mr_signer")->capture_default_str();
    serve->add_option("--min-tcb", session_min_tcb, "Session policy: minimum TCB level")->capture_default_str();
    serve->add_option("--audit", audit, "Append audit records to this JSONL file");

    auto* add = app.add_subcommand("add-secret", "Add or replace a secret, creating the vault if needed");
    add->add_option("--vault", vault_path, "Vault file")->required();
    add->add_option("--passphrase", passphrase, "Vault passphrase (or PPML_VAULT_PASSPHRASE)");
    add->add_option("--name", name, "Secret name")->required();
    auto* src = add->add_option_group("secret");
    src->add_option("--secret-hex", secret_hex, "Secret bytes as hex");
    src->add_flag("--random", random_secret, "Generate a random 32-byte secret and print it");
    src->require_option(1);
    add->add_option("--policy-mrenclave", mr_enclave_hex, "Required mr_enclave");
    add->add_option("--policy-mrsigner", policy_signer_hex, "Required mr_signer");
    add->add_option("--policy-min-svn", min_svn, "Minimum ISV SVN");
    add->add_option("--policy-min-tcb", min_tcb, "Minimum TCB level");

    CLI11_PARSE(app, argc, argv);

    try {
        auto pass = cli::passphrase_or_env(passphrase);
        if (*add) {
            prov::KeyVault vault = fs::exists(vault_path) ? prov::vault_load(vault_path, pass) : prov::KeyVault{};
            attest::VerificationPolicy policy;
            if (!mr_enclave_hex.empty()) {
                policy.expected_mr_enclave = cli::parse_hex_arg<crypto::Digest32>("--policy-mrenclave", mr_enclave_hex);
            }
            if (!policy_signer_hex.empty()) {
                policy.expected_mr_signer =
                    cli::parse_hex_arg<crypto::Digest32>("--policy-mrsigner", policy_signer_hex);
            }
            policy.min_isv_svn = min_svn;
            policy.min_tcb_level = min_tcb;
            Bytes secret = random_secret ? crypto::random_key().to_vector() : from_hex(secret_hex);
            vault.put(name, {secret, policy});
            prov::vault_save(vault, vault_path, pass);
            if (random_secret) std::cout << to_hex(secret) << "\n";
        } else {
            auto signals = cli::block_termination_signals();
            auto vault = prov::vault_load(vault_path, pass);
            auto pcs_ep = wire::parse_endpoint(pcs);

            prov::ServerConfig sc;
            sc.session_policy.expected_mr_signer = cli::parse_hex_arg<crypto::Digest32>("--mrsigner", mr_signer_hex);
            sc.session_policy.min_tcb_level = session_min_tcb;
            sc.session_policy.accepted_root = attest::PcsClient(pcs_ep).root_public_key();
            sc.verifier_key = crypto::signing_generate();
            sc.crl_source = [pcs_ep] { return attest::PcsClient(pcs_ep).current_crl(); };
            sc.clock = attest::system_now;
            if (!audit.empty()) sc.audit_log = fs::path(audit);
            cli::write_text(pin_out, sc.verifier_key.public_key.hex() + "\n");

            prov::KeyServer ks(std::move(vault), sc);
            wire::ConnectionServer server(
                wire::parse_endpoint(listen), [&](wire::Connection& c) { ks.handle(c); },
                [](const std::string& peer, const std::exception& e) {
                    std::cerr << "keyserver: " << peer << ": " << e.what() << std::endl;
                });
            std::cout << "keyserver listening on " << server.endpoint().to_string() << ", pin "
                      << sc.verifier_key.public_key.hex() << std::endl;
            cli::wait_for_signal(signals);
            server.stop();
        }
    } catch (const pfs::IntegrityError& e) {
        std::cerr << "keyserver: cannot open vault: " << e.what() << "\n";
        return cli::kExitIntegrity;
    } catch (const std::exception& e) {
        std::cerr << "keyserver: " << e.what() << "\n";
        return cli::kExitOther;
    }
    return cli::kExitOk;
}
