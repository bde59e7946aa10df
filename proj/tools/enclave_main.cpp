// enclave: start a simulated enclave from a final manifest and run a workload.

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "ppml/enclave_host.hpp"
#include "ppml/provisioning.hpp"

using namespace ppml;
namespace fs = std::filesystem;

namespace {

std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    return s;
}

crypto::PublicKey load_pin(const std::string& arg) {
    auto text = fs::exists(arg) ? trim(to_string(cli::read_file(arg))) : arg;
    return cli::parse_hex_arg<crypto::PublicKey>("--pin", text);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Simulated enclave host"};
    app.require_subcommand(1);

    std::string manifest_path, root, workload_path, platform_path, keyserver = "127.0.0.1:7100", pin;

    auto* start = app.add_subcommand("start", "Check a deployment and print its measurement");
    start->add_option("--manifest", manifest_path, "Final manifest")->required()->check(CLI::ExistingFile);
    start->add_option("--root", root, "Host directory holding the mounts")->required()->check(CLI::ExistingDirectory);

    auto* run = app.add_subcommand("run", "Start, get the key from the key server, run the workload");
    run->add_option("--workload", workload_path, "Workload JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--manifest", manifest_path, "Final manifest")->required()->check(CLI::ExistingFile);
    run->add_option("--root", root, "Host directory holding the mounts")->required()->check(CLI::ExistingDirectory);
    run->add_option("--platform", platform_path, "Output of `pcs register`")->required()->check(CLI::ExistingFile);
    run->add_option("--keyserver", keyserver, "Key server address")->capture_default_str();
    run->add_option("--pin", pin, "Verifier public key, hex or a file holding it")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        auto instance = enclave::EnclaveInstance::start_from_file(manifest_path, root);
        if (*start) {
            std::cout << instance.measurement().hex() << "\n";
            return cli::kExitOk;
        }
        auto workload = nlohmann::json::parse(to_string(cli::read_file(workload_path))).get<enclave::WorkloadSpec>();
        auto platform = nlohmann::json::parse(to_string(cli::read_file(platform_path)));
        instance.attach_platform(platform.at("identity").get<attest::PlatformIdentity>(),
                                 platform.at("chain").get<attest::CertChain>());
        enclave::enclave_provision(instance, wire::parse_endpoint(keyserver), load_pin(pin), workload.key_name);
        auto report = enclave::enclave_run(instance, workload);
        std::cout << nlohmann::json{{"rows", report.rows}, {"output", report.output_path}}.dump() << "\n";
    } catch (const enclave::StartError& e) {
        std::cerr << "enclave: start failed (" << enclave::to_string(e.kind()) << "): " << e.what() << "\n";
        return e.kind() == enclave::StartError::Kind::trusted_file_mismatch ? cli::kExitIntegrity : cli::kExitOther;
    } catch (const ra::HandshakeError& e) {
        std::cerr << "enclave: attestation failed: " << e.what() << "\n";
        return cli::kExitAttestation;
    } catch (const prov::Denied& e) {
        std::cerr << "enclave: " << e.what() << "\n";
        return cli::kExitAttestation;
    } catch (const enclave::RunError& e) {
        std::cerr << "enclave: run failed (" << enclave::to_string(e.kind()) << "): " << e.what() << "\n";
        return e.kind() == enclave::RunError::Kind::integrity ? cli::kExitIntegrity : cli::kExitOther;
    } catch (const std::exception& e) {
        std::cerr << "enclave: " << e.what() << "\n";
        return cli::kExitOther;
    }
    return cli::kExitOk;
}
