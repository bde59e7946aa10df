// pfs: create, read, check, and inspect Protected FS files.

#include <CLI11.hpp>

#include "cli_util.hpp"
#include "json.hpp"
#include "ppml/protected_fs.hpp"

using namespace ppml;

int main(int argc, char** argv) {
    CLI::App app{"Protected FS file tool"};
    app.require_subcommand(1);

    std::string in, out, key_hex, label;
    std::size_t cache = pfs::kDefaultCacheCapacity;
    bool as_json = false;

    auto* enc = app.add_subcommand("encrypt", "Encrypt a plaintext file");
    enc->add_option("input", in, "Plaintext file")->required()->check(CLI::ExistingFile);
    enc->add_option("output", out, "Protected file to create")->required();
    enc->add_option("--key-hex", key_hex, "256-bit master key")->required();
    enc->add_option("--label", label, "Filename label bound into the file")->required();
    enc->add_option("--cache", cache, "Node cache capacity");

    auto* dec = app.add_subcommand("decrypt", "Decrypt a protected file");
    dec->add_option("input", in, "Protected file")->required()->check(CLI::ExistingFile);
    dec->add_option("output", out, "Plaintext output")->required();
    dec->add_option("--key-hex", key_hex, "256-bit master key")->required();
    dec->add_option("--label", label, "Expected filename label")->required();
    dec->add_option("--cache", cache, "Node cache capacity");

    auto* ver = app.add_subcommand("verify", "Authenticate every node; exit 1 on the first bad one");
    ver->add_option("file", in, "Protected file")->required()->check(CLI::ExistingFile);
    ver->add_option("--key-hex", key_hex, "256-bit master key")->required();

    auto* info = app.add_subcommand("info", "Print size, block counts and uuid");
    info->add_option("file", in, "Protected file")->required()->check(CLI::ExistingFile);
    info->add_option("--key-hex", key_hex, "256-bit master key")->required();
    info->add_flag("--json", as_json, "Print JSON");

    CLI11_PARSE(app, argc, argv);

    try {
        auto key = cli::parse_hex_arg<crypto::Aes256GcmKey>("--key-hex", key_hex);
        pfs::PfsOptions opts;
        opts.cache_capacity = cache;
        if (*enc) {
            auto plain = cli::read_file(in);
            auto f = pfs::ProtectedFile::create(out, label, key, opts);
            f.write(0, plain);
            f.close();
        } else if (*dec) {
            auto f = pfs::ProtectedFile::open(in, label, key, pfs::OpenMode::read_only, opts);
            cli::write_file(out, f.read_all());
        } else if (*ver) {
            auto r = pfs::verify(in, key);
            if (r.ok) {
                std::cout << "ok\n";
                return cli::kExitOk;
            }
            std::cout << "FAILED at " << r.first_bad_node.value_or("?") << ": " << r.detail << "\n";
            return 1;
        } else if (*info) {
            auto i = pfs::inspect(in, key);
            if (as_json) {
                std::cout << nlohmann::json{{"uuid", i.uuid.hex()},
                                            {"label", i.label},
                                            {"size", i.size},
                                            {"data_blocks", i.data_blocks},
                                            {"mht_nodes", i.mht_nodes},
                                            {"file_length", i.file_length}}
                                 .dump(2)
                          << "\n";
            } else {
                std::cout << "uuid         " << i.uuid.hex() << "\n"
                          << "label        " << i.label << "\n"
                          << "size         " << i.size << "\n"
                          << "data_blocks  " << i.data_blocks << "\n"
                          << "mht_nodes    " << i.mht_nodes << "\n"
                          << "file_length  " << i.file_length << "\n";
            }
        }
    } catch (const pfs::IntegrityError& e) {
        std::cerr << "pfs: integrity: " << e.what() << "\n";
        return cli::kExitIntegrity;
    } catch (const std::exception& e) {
        std::cerr << "pfs: " << e.what() << "\n";
        return cli::kExitOther;
    }
    return cli::kExitOk;
}
