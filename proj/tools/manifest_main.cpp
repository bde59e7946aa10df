// manifest: sign a template into a final manifest and print measurements.

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "ppml/manifest.hpp"

using namespace ppml;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Enclave manifest signer"};
    app.require_subcommand(1);

    std::string tmpl_path, out_path, root, final_path;

    auto* sign = app.add_subcommand("sign", "Hash trusted files and write the final manifest");
    sign->add_option("template", tmpl_path, "Manifest template")->required()->check(CLI::ExistingFile);
    sign->add_option("-o,--output", out_path, "Final manifest to write")->required();
    sign->add_option("--root", root, "Host directory the mounts are relative to (default: template's directory)");

    auto* measure = app.add_subcommand("measure", "Print the measurement of a final manifest");
    measure->add_option("final", final_path, "Final manifest")->required()->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*sign) {
            auto tmpl = manifest::parse_template(to_string(cli::read_file(tmpl_path)));
            fs::path host_root = root.empty() ? fs::absolute(tmpl_path).parent_path() : fs::path(root);
            auto fm = manifest::sign_manifest(tmpl, manifest::host_resolver(tmpl, host_root));
            cli::write_text(out_path, manifest::serialize(fm));
            std::cout << manifest::compute_measurement(fm).hex() << "\n";
        } else {
            auto fm = manifest::load(to_string(cli::read_file(final_path)));
            std::cout << manifest::compute_measurement(fm).hex() << "\n";
        }
    } catch (const manifest::ParseError& e) {
        std::cerr << "manifest: parse error: " << e.what() << "\n";
        return cli::kExitOther;
    } catch (const std::exception& e) {
        std::cerr << "manifest: " << e.what() << "\n";
        return cli::kExitOther;
    }
    return cli::kExitOk;
}
