#include "ppml/manifest.hpp"

#include <gtest/gtest.h>

#include <random>
#include <set>

#include "test_util.hpp"

namespace ppml::manifest {
namespace {

constexpr const char* kMinimal = R"(
# smallest useful template
loader.entrypoint = /app/run
fs.mount = app /app
sgx.enclave_size = 1M
sgx.max_threads = 1
)";

// Template listing things out of canonical order on purpose.
constexpr const char* kDemo = R"(loader.entrypoint = /app/linear_infer
loader.argv = infer
loader.argv = --rows=2
loader.env.OMP_NUM_THREADS = 1
loader.env.LANG = C
fs.mount = data /data
fs.mount = app /app
sgx.trusted_files = /app/linear_infer
sgx.trusted_files = /app/config.ini
sgx.protected_files = /data
sgx.enclave_size = 256M
sgx.max_threads = 4
)";

// Expected canonical serialization of kDemo signed over the files below. Its
// SHA-256 was computed independently with Python's hashlib.
constexpr const char* kDemoCanonical =
    "fs.mount = app /app\n"
    "fs.mount = data /data\n"
    "loader.argv = infer\n"
    "loader.argv = --rows=2\n"
    "loader.entrypoint = /app/linear_infer\n"
    "loader.env.LANG = C\n"
    "loader.env.OMP_NUM_THREADS = 1\n"
    "manifest.format_version = 1\n"
    "sgx.enclave_size = 268435456\n"
    "sgx.max_threads = 4\n"
    "sgx.protected_files = /data\n"
    "sgx.trusted_files = /app/config.ini\n"
    "sgx.trusted_files = /app/linear_infer\n"
    "sgx.trusted_hash./app/config.ini = 854cb56fafca56f49a07bf54033cd6cd0adacb2306fa0c22ce9ac4607f8896b7\n"
    "sgx.trusted_hash./app/linear_infer = 4ea8efb9cbada299170164cd13adc142498736e5f91b83526bd8334e8c95f696\n";
constexpr const char* kDemoMeasurement = "41489e9bc7ccad069530e944ebac38b824e4a2cdd9dcc6003cc95ae689c5c612";

std::map<std::string, Bytes> demo_files() {
    return {{"/app/config.ini", to_bytes("weights=3\n")}, {"/app/linear_infer", to_bytes("\x7f" "ELF-demo")}};
}

FileResolver map_resolver(std::map<std::string, Bytes> files, std::vector<std::string>* log = nullptr) {
    return [files = std::move(files), log](const std::string& path) -> std::optional<Bytes> {
        if (log) log->push_back(path);
        auto it = files.find(path);
        if (it == files.end()) return std::nullopt;
        return it->second;
    };
}

FinalManifest demo_final() { return sign_manifest(parse_template(kDemo), map_resolver(demo_files())); }

std::size_t error_line(std::string_view text) {
    try {
        parse_template(text);
    } catch (const ParseError& e) {
        return e.line();
    }
    ADD_FAILURE() << "expected ParseError";
    return 0;
}

TEST(ParseTemplate, MinimalTemplate) {
    auto t = parse_template(kMinimal);
    EXPECT_EQ(t.entrypoint, "/app/run");
    ASSERT_EQ(t.mounts.size(), 1u);
    EXPECT_EQ(t.mounts[0].host_path, "app");
    EXPECT_EQ(t.mounts[0].enclave_path, "/app");
    EXPECT_EQ(t.enclave_size, 1u << 20);
    EXPECT_EQ(t.max_threads, 1u);
}

TEST(ParseTemplate, TrustedAndProtectedConflict) {
    std::string text = std::string(kMinimal) + "sgx.trusted_files = /app/x\nsgx.protected_files = /app/x\n";
    EXPECT_THROW(parse_template(text), ParseError);
    std::string under_dir = std::string(kMinimal) + "sgx.trusted_files = /app/x\nsgx.protected_files = /app\n";
    EXPECT_THROW(parse_template(under_dir), ParseError);
}

TEST(ParseTemplate, EnclaveSizeMustBePowerOfTwo) {
    EXPECT_THROW(parse_template("loader.entrypoint = /a\nsgx.enclave_size = 3M\nsgx.max_threads = 1\n"), ParseError);
    EXPECT_THROW(parse_template("loader.entrypoint = /a\nsgx.enclave_size = 512K\nsgx.max_threads = 1\n"), ParseError);
    EXPECT_NO_THROW(parse_template("loader.entrypoint = /a\nsgx.enclave_size = 2G\nsgx.max_threads = 1\n"));
}

TEST(ParseTemplate, ErrorsCarryLineNumbers) {
    EXPECT_EQ(error_line("loader.entrypoint = /a\nbogus.key = 1\n"), 2u);
    EXPECT_EQ(error_line("loader.entrypoint = /a\nsgx.max_threads = 1\nsgx.max_threads = 2\n"), 3u);
    EXPECT_EQ(error_line("\n\nno equals sign here\n"), 3u);
    EXPECT_EQ(error_line("loader.entrypoint = /a\nsgx.enclave_size = 1M\nsgx.max_threads = 0\n"), 3u);
}

TEST(ParseTemplate, RejectsMalformedEntries) {
    auto base = std::string("loader.entrypoint = /a\nsgx.enclave_size = 1M\nsgx.max_threads = 1\n");
    EXPECT_THROW(parse_template(base + "fs.mount = onlyone\n"), ParseError);
    EXPECT_THROW(parse_template(base + "fs.mount = a relative\n"), ParseError);
    EXPECT_THROW(parse_template(base + "fs.mount = a /x\nfs.mount = b /x\n"), ParseError);
    EXPECT_THROW(parse_template(base + "fs.mount = ../up /x\n"), ParseError);
    EXPECT_THROW(parse_template(base + "sgx.trusted_files = rel/path\n"), ParseError);
    EXPECT_THROW(parse_template(base + "loader.env.A = 1\nloader.env.A = 2\n"), ParseError);
    EXPECT_THROW(parse_template(base + "sgx.trusted_hash./a = 00\n"), ParseError);  // final-only key
    EXPECT_THROW(parse_template("sgx.enclave_size = 1M\nsgx.max_threads = 1\n"), ParseError);
    EXPECT_THROW(parse_template("loader.entrypoint = /a\nsgx.max_threads = 1\n"), ParseError);
}

TEST(SignManifest, NoTrustedFiles) {
    auto final = sign_manifest(parse_template(kMinimal), map_resolver({}));
    EXPECT_TRUE(final.trusted_file_hashes.empty());
}

TEST(SignManifest, HashIsSha256OfContents) {
    auto t = parse_template(std::string(kMinimal) + "sgx.trusted_files = /app/abc\n");
    auto final = sign_manifest(t, map_resolver({{"/app/abc", to_bytes("abc")}}));
    EXPECT_EQ(final.trusted_file_hashes.at("/app/abc").hex(),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(SignManifest, OneByteChangeChangesOneEntry) {
    auto files = demo_files();
    auto before = sign_manifest(parse_template(kDemo), map_resolver(files));
    files["/app/config.ini"][0] ^= 1;
    auto after = sign_manifest(parse_template(kDemo), map_resolver(files));
    std::size_t changed = 0;
    for (const auto& [path, digest] : before.trusted_file_hashes) {
        if (after.trusted_file_hashes.at(path) != digest) {
            ++changed;
            EXPECT_EQ(path, "/app/config.ini");
        }
    }
    EXPECT_EQ(changed, 1u);
    EXPECT_EQ(before.config, after.config);
}

TEST(SignManifest, MissingFileNamesFirstPath) {
    auto t = parse_template(std::string(kMinimal) + "sgx.trusted_files = /app/b\nsgx.trusted_files = /app/a\n");
    try {
        sign_manifest(t, map_resolver({}));
        FAIL();
    } catch (const MissingFileError& e) {
        EXPECT_EQ(e.path(), "/app/b");
    }
}

TEST(SignManifest, NeverReadsProtectedFiles) {
    std::vector<std::string> accessed;
    auto files = demo_files();
    files["/data/model.bin"] = to_bytes("secret");
    sign_manifest(parse_template(kDemo), map_resolver(files, &accessed));
    for (const auto& p : accessed) EXPECT_FALSE(p.starts_with("/data")) << p;
    EXPECT_EQ(accessed.size(), 2u);
}

TEST(Serialize, CanonicalTextAndMeasurement) {
    auto final = demo_final();
    EXPECT_EQ(serialize(final), kDemoCanonical);
    EXPECT_EQ(compute_measurement(final).hex(), kDemoMeasurement);
}

TEST(Serialize, RoundtripAndFixedPoint) {
    auto final = demo_final();
    auto text = serialize(final);
    EXPECT_EQ(load(text), final);
    EXPECT_EQ(serialize(load(text)), text);
    EXPECT_EQ(serialize(final), serialize(final));
}

TEST(Serialize, TruncatedInputRejected) {
    std::string text = serialize(demo_final());
    for (std::size_t cut : {text.size() / 2, text.size() - 1, std::size_t{10}}) {
        EXPECT_THROW(load(text.substr(0, cut)), ParseError) << cut;
    }
    // Dropping whole trailing lines loses a trusted hash.
    auto drop_last = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    EXPECT_THROW(load(drop_last), ParseError);
}

TEST(Serialize, LoadRejectsInconsistentHashes) {
    std::string text = serialize(demo_final());
    EXPECT_THROW(load(text + "sgx.trusted_hash./app/other = " + std::string(64, '0') + "\n"), ParseError);
    std::string bad_version = text;
    bad_version.replace(bad_version.find("format_version = 1"), 18, "format_version = 2");
    EXPECT_THROW(load(bad_version), ParseError);
}

TEST(Measurement, EnvOrderDoesNotMatter) {
    auto a = parse_template(kDemo);
    std::string swapped = kDemo;
    auto l1 = std::string("loader.env.OMP_NUM_THREADS = 1\n");
    auto l2 = std::string("loader.env.LANG = C\n");
    swapped.replace(swapped.find(l1), l1.size(), "");
    swapped.replace(swapped.find(l2), l2.size(), l2 + l1);
    auto b = parse_template(swapped);
    EXPECT_EQ(compute_measurement(sign_manifest(a, map_resolver(demo_files()))),
              compute_measurement(sign_manifest(b, map_resolver(demo_files()))));
}

TEST(Measurement, MaxThreadsChangesMeasurement) {
    auto final = demo_final();
    auto m1 = compute_measurement(final);
    final.config.max_threads = 5;
    EXPECT_NE(compute_measurement(final), m1);
}

// Single semantic mutations must always move the measurement.
TEST(Measurement, RandomSingleFieldMutations) {
    std::mt19937_64 rng(5);
    const auto base = demo_final();
    const auto base_m = compute_measurement(base);
    for (int i = 0; i < 200; ++i) {
        auto m = base;
        auto& c = m.config;
        std::string token = "v" + std::to_string(rng() % 100000);
        switch (rng() % 9) {
            case 0:
                m.trusted_file_hashes.begin()->second[rng() % 32] ^= static_cast<std::uint8_t>(1u << (rng() % 8));
                break;
            case 1: c.mounts[rng() % c.mounts.size()].host_path += token; break;
            case 2: c.mounts[rng() % c.mounts.size()].enclave_path += token; break;
            case 3: c.args[rng() % c.args.size()] += token; break;
            case 4: c.args.push_back(token); break;
            case 5: c.env["NEW_" + token] = token; break;
            case 6: c.env.begin()->second += token; break;
            case 7: c.enclave_size <<= 1 + rng() % 3; break;
            case 8: c.max_threads += 1 + static_cast<std::uint32_t>(rng() % 10); break;
        }
        EXPECT_NE(compute_measurement(m), base_m) << "mutation " << i;
        EXPECT_EQ(compute_measurement(load(serialize(base))), base_m);
    }
}

TEST(ResolveHostPath, LongestPrefixAndVisibility) {
    std::vector<MountEntry> mounts{{"app", "/app"}, {"appdata", "/app/data"}, {"d", "/data"}};
    std::filesystem::path root = "/host";
    EXPECT_EQ(resolve_host_path(mounts, root, "/app/x"), std::filesystem::path("/host/app/x"));
    EXPECT_EQ(resolve_host_path(mounts, root, "/app/data/m"), std::filesystem::path("/host/appdata/m"));
    EXPECT_EQ(resolve_host_path(mounts, root, "/data"), std::filesystem::path("/host/d"));
    EXPECT_FALSE(resolve_host_path(mounts, root, "/etc/passwd").has_value());
    EXPECT_FALSE(resolve_host_path(mounts, root, "/application").has_value());
    EXPECT_FALSE(resolve_host_path(mounts, root, "/app/../etc/passwd").has_value());
    EXPECT_FALSE(resolve_host_path(mounts, root, "relative").has_value());
}

TEST(HostResolver, ReadsThroughMounts) {
    ppml::testing::TempDir dir;
    std::filesystem::create_directories(dir / "app");
    ppml::testing::spit(dir / "app" / "abc", as_bytes("abc"));
    auto t = parse_template(std::string(kMinimal) + "sgx.trusted_files = /app/abc\n");
    auto final = sign_manifest(t, host_resolver(t, dir.path()));
    EXPECT_EQ(final.trusted_file_hashes.at("/app/abc"), crypto::hash(std::string_view("abc")));
    auto missing = parse_template(std::string(kMinimal) + "sgx.trusted_files = /app/nope\n");
    EXPECT_THROW(sign_manifest(missing, host_resolver(missing, dir.path())), MissingFileError);
}

TEST(PathClasses, ProtectedDirectoriesCoverChildren) {
    auto t = parse_template(kDemo);
    EXPECT_TRUE(is_protected_path(t, "/data"));
    EXPECT_TRUE(is_protected_path(t, "/data/model.bin"));
    EXPECT_FALSE(is_protected_path(t, "/database"));
    EXPECT_TRUE(is_trusted_path(t, "/app/config.ini"));
    EXPECT_FALSE(is_trusted_path(t, "/app/other"));
}

}  // namespace
}  // namespace ppml::manifest
