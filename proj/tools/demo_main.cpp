// demo: run the full deployment flow on loopback and report each step.

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "ppml/workflow.hpp"

using namespace ppml;

int main(int argc, char** argv) {
    CLI::App app{"End-to-end PPML deployment demo"};
    std::string config_path, variant, report_path;
    bool keep = false, quiet = false;
    app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app.add_option("--variant", variant, "none, revoked_platform, tampered_input or wrong_manifest");
    app.add_option("--report", report_path, "Write the report as JSON here");
    app.add_flag("--keep", keep, "Keep the work directory");
    app.add_flag("-q,--quiet", quiet, "Only print the step table");
    CLI11_PARSE(app, argc, argv);

    workflow::DemoConfig cfg;
    try {
        if (!config_path.empty()) cfg = workflow::DemoConfig::parse(to_string(cli::read_file(config_path)));
        if (!variant.empty()) cfg.variant = workflow::parse_variant(variant);
        if (keep) cfg.keep = true;
    } catch (const std::exception& e) {
        std::cerr << "demo: " << e.what() << "\n";
        return cli::kExitOther;
    }

    auto report = workflow::workflow_demo(cfg, quiet ? nullptr : &std::cout);
    std::cout << "\n" << workflow::step_table(report);
    if (report.ok()) {
        std::cout << "confinement: " << report.files_scanned << " files scanned, " << report.leaked_files.size()
                  << " with plaintext; " << report.frames_tapped << " frames tapped, " << report.key_leaks
                  << " with the key in clear\n";
    }
    if (cfg.keep) std::cout << "work dir: " << report.work_dir << "\n";
    if (!report_path.empty()) cli::write_text(report_path, workflow::to_json(report).dump(2) + "\n");
    return report.exit_code;
}
