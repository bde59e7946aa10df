#include "ppml/workflow.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <ostream>
#include <random>
#include <sstream>
#include <unordered_set>

#include "ppml/enclave_host.hpp"
#include "ppml/pcs_service.hpp"
#include "ppml/protected_fs.hpp"
#include "ppml/provisioning.hpp"

namespace ppml::workflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::size_t kScanWindow = 16;

const char* const kStepTitles[] = {
    "platform registered, enclave built",
    "user fetches certificates and CRL",
    "user encrypts model and input",
    "enclave starts, RA-TLS connection",
    "user verifies the enclave",
    "key provisioned",
    "transparent decryption",
    "inference",
    "encrypted output stored",
};

constexpr const char* kManifestTemplate = R"(loader.entrypoint = /app/linear_infer
loader.argv = linear_infer
loader.argv = /app/workload.json
loader.env.OMP_NUM_THREADS = 1
fs.mount = app /app
fs.mount = data /data
sgx.trusted_files = /app/linear_infer
sgx.trusted_files = /app/workload.json
sgx.protected_files = /data
sgx.enclave_size = 256M
sgx.max_threads = 4
)";

// What a careless or hostile operator deploys instead.
constexpr const char* kWrongManifestExtra = "loader.env.PPML_DEBUG = 1\n";

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_uint(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    unsigned long long n = 0;
    try {
        n = std::stoull(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != v.size() || v.empty() || v[0] == '-' || n > std::numeric_limits<T>::max()) {
        throw std::invalid_argument(key + ": expected an unsigned integer, got '" + v + "'");
    }
    return static_cast<T>(n);
}

void spit(const fs::path& p, ByteView data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

Bytes slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void flip_bit(const fs::path& p, std::uint64_t offset, int bit) {
    std::fstream f(p, std::ios::binary | std::ios::in | std::ios::out);
    f.seekg(static_cast<std::streamoff>(offset));
    char c = 0;
    f.read(&c, 1);
    c = static_cast<char>(c ^ (1 << bit));
    f.seekp(static_cast<std::streamoff>(offset));
    f.write(&c, 1);
}

struct Plain {
    std::vector<std::vector<double>> w;
    std::vector<double> b;
    std::vector<std::vector<double>> x;
};

Plain generate(const DemoConfig& c) {
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> weight(-1.0, 1.0);
    std::normal_distribution<double> feature(0.0, 5.0);
    Plain p;
    p.w.assign(c.outputs, std::vector<double>(c.dims));
    for (auto& row : p.w) {
        for (auto& v : row) v = weight(rng);
    }
    for (std::uint32_t i = 0; i < c.outputs; ++i) p.b.push_back(weight(rng));
    p.x.assign(c.rows, std::vector<double>(c.dims));
    for (auto& row : p.x) {
        for (auto& v : row) v = feature(rng);
    }
    return p;
}

// Plaintext run on the user's side, straight from the generated values.
std::vector<std::vector<double>> reference_run(const Plain& p) {
    std::vector<std::vector<double>> out;
    for (const auto& x : p.x) {
        std::vector<double> y;
        for (std::size_t i = 0; i < p.w.size(); ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < x.size(); ++j) acc += p.w[i][j] * x[j];
            y.push_back(acc + p.b[i]);
        }
        out.push_back(std::move(y));
    }
    return out;
}

using Snapshot = std::map<std::string, crypto::Digest32>;

Snapshot snapshot(const fs::path& root) {
    Snapshot s;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) s[fs::relative(e.path(), root).generic_string()] = crypto::hash(slurp(e.path()));
    }
    return s;
}

class WindowSet {
public:
    void add(ByteView plaintext) {
        for (std::size_t off = 0; off + kScanWindow <= plaintext.size(); ++off) {
            set_.emplace(reinterpret_cast<const char*>(plaintext.data() + off), kScanWindow);
        }
    }
    bool found_in(ByteView data) const {
        for (std::size_t off = 0; off + kScanWindow <= data.size(); ++off) {
            if (set_.count(std::string(reinterpret_cast<const char*>(data.data() + off), kScanWindow))) return true;
        }
        return false;
    }

private:
    std::unordered_set<std::string> set_;
};

bool contains(ByteView haystack, ByteView needle) {
    return std::search(haystack.begin(), haystack.end(), needle.begin(), needle.end()) != haystack.end();
}

// A step failure together with where it belongs and how the demo exits.
struct Failure {
    int step;
    int exit_code;
    std::string message;
};

Failure classify(int running_step, const std::exception& e) {
    if (auto* h = dynamic_cast<const ra::HandshakeError*>(&e)) {
        bool verification = h->kind() == ra::HandshakeError::Kind::attestation_failed ||
                            h->kind() == ra::HandshakeError::Kind::binding_mismatch;
        return {verification ? 4 : 3, kExitAttestation, e.what()};
    }
    if (dynamic_cast<const prov::Denied*>(&e)) return {5, kExitAttestation, e.what()};
    if (auto* r = dynamic_cast<const enclave::RunError*>(&e)) {
        return {running_step, r->kind() == enclave::RunError::Kind::integrity ? kExitIntegrity : kExitOther, e.what()};
    }
    if (auto* s = dynamic_cast<const enclave::StartError*>(&e)) {
        bool integrity = s->kind() == enclave::StartError::Kind::trusted_file_mismatch;
        return {running_step, integrity ? kExitIntegrity : kExitOther, e.what()};
    }
    if (dynamic_cast<const pfs::IntegrityError*>(&e)) return {running_step, kExitIntegrity, e.what()};
    return {running_step, kExitOther, e.what()};
}

double millis_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

std::string_view status_name(StepStatus s) {
    switch (s) {
        case StepStatus::ok: return "ok";
        case StepStatus::failed: return "failed";
        case StepStatus::skipped: return "skipped";
    }
    return "unknown";
}

}  // namespace

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::none: return "none";
        case Variant::revoked_platform: return "revoked_platform";
        case Variant::tampered_input: return "tampered_input";
        case Variant::wrong_manifest: return "wrong_manifest";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name) {
    for (auto v : {Variant::none, Variant::revoked_platform, Variant::tampered_input, Variant::wrong_manifest}) {
        if (name == to_string(v)) return v;
    }
    throw std::invalid_argument("unknown variant '" + std::string(name) + "'");
}

DemoConfig DemoConfig::parse(std::string_view text) {
    DemoConfig c;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string raw; std::getline(in, raw);) {
        ++line_no;
        auto hash = raw.find('#');
        auto line = trim(std::string_view(raw).substr(0, hash));
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("line " + std::to_string(line_no) + ": expected key = value");
        }
        auto key = trim(std::string_view(line).substr(0, eq));
        auto value = trim(std::string_view(line).substr(eq + 1));
        if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);

        if (key == "work_dir") c.work_dir = value;
        else if (key == "keep") {
            if (value != "true" && value != "false") throw std::invalid_argument("keep: expected true or false");
            c.keep = value == "true";
        } else if (key == "variant") c.variant = parse_variant(value);
        else if (key == "rows") c.rows = parse_uint<std::uint32_t>(key, value);
        else if (key == "dims") c.dims = parse_uint<std::uint32_t>(key, value);
        else if (key == "outputs") c.outputs = parse_uint<std::uint32_t>(key, value);
        else if (key == "seed") c.seed = parse_uint<std::uint64_t>(key, value);
        else if (key == "tcb_level") c.tcb_level = parse_uint<std::uint32_t>(key, value);
        else if (key == "key_name") c.key_name = value;
        else if (key == "pcs_listen") c.pcs_listen = wire::parse_endpoint(value);
        else if (key == "keyserver_listen") c.keyserver_listen = wire::parse_endpoint(value);
        else throw std::invalid_argument("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (c.rows == 0 || c.dims == 0 || c.outputs == 0) {
        throw std::invalid_argument("rows, dims and outputs must be positive");
    }
    if (!prov::valid_secret_name(c.key_name)) throw std::invalid_argument("key_name is not a valid secret name");
    return c;
}

std::string_view step_label(int step) {
    static const char* const labels[] = {"⓪", "①", "②", "③", "④", "⑤", "⑥", "⑦", "⑧"};
    return step >= 0 && step <= 8 ? labels[step] : "?";
}

json to_json(const DemoReport& r) {
    json steps = json::array();
    for (const auto& s : r.steps) {
        steps.push_back({{"step", s.step},
                         {"title", s.title},
                         {"status", status_name(s.status)},
                         {"detail", s.detail},
                         {"millis", s.millis}});
    }
    return {{"variant", to_string(r.variant)},
            {"ok", r.ok()},
            {"exit_code", r.exit_code},
            {"failed_step", r.failed_step ? json(*r.failed_step) : json(nullptr)},
            {"error", r.error},
            {"expected_mr_enclave", r.expected_mr_enclave},
            {"enclave_mr_enclave", r.enclave_mr_enclave},
            {"output_rows", r.output_rows},
            {"output_matches_reference", r.output_matches_reference},
            {"confinement",
             {{"files_scanned", r.files_scanned},
              {"leaked_files", r.leaked_files},
              {"frames_tapped", r.frames_tapped},
              {"key_leaks", r.key_leaks}}},
            {"steps", steps},
            {"trace", r.trace},
            {"total_millis", r.total_millis},
            {"work_dir", r.work_dir}};
}

std::string step_table(const DemoReport& r) {
    std::ostringstream out;
    for (const auto& s : r.steps) {
        const char* status = s.status == StepStatus::ok ? "ok" : s.status == StepStatus::failed ? "FAILED" : "-";
        char ms[32];
        std::snprintf(ms, sizeof ms, "%8.1f ms", s.millis);
        out << step_label(s.step) << "  " << std::left;
        out.width(36);
        out << s.title;
        out.width(8);
        out << status << ms;
        if (!s.detail.empty()) out << "  " << s.detail;
        out << '\n';
    }
    out << "result: " << (r.ok() ? "ok" : "failed at step " + std::string(step_label(r.failed_step.value_or(0))))
        << " (exit " << r.exit_code << ")\n";
    return out.str();
}

DemoReport workflow_demo(const DemoConfig& cfg, std::ostream* log) {
    auto t_start = std::chrono::steady_clock::now();
    DemoReport report;
    report.variant = cfg.variant;
    for (int i = 0; i <= 8; ++i) report.steps.push_back({i, kStepTitles[i], StepStatus::skipped, "", 0});

    bool temp_dir = cfg.work_dir.empty();
    fs::path root = cfg.work_dir;
    if (temp_dir) {
        std::random_device rd;
        root = fs::temp_directory_path() / ("ppml-demo-" + std::to_string(rd()) + std::to_string(rd()));
    }
    report.work_dir = root.string();
    auto user_dir = root / "user";
    auto cloud_dir = root / "cloud";
    auto ks_dir = root / "keyserver";
    auto pcs_dir = root / "pcs";
    for (const auto& d : {user_dir, cloud_dir / "app", cloud_dir / "data", ks_dir, pcs_dir}) fs::create_directories(d);

    auto trace = [&](int step, const std::string& what) {
        report.trace.push_back(std::string(step_label(step)) + " " + what);
    };

    // Party state. Each party only learns about the others through the wire.
    std::unique_ptr<attest::PcsDatabase> pcs_db;
    std::unique_ptr<attest::PcsService> pcs_service;
    std::unique_ptr<wire::ConnectionServer> pcs_server;
    std::unique_ptr<prov::KeyServer> key_server;
    std::unique_ptr<wire::ConnectionServer> ks_server;
    std::mutex ks_errors_mu;
    std::vector<std::string> ks_errors;

    attest::Registration platform;  // cloud side
    std::optional<enclave::EnclaveInstance> instance;
    std::shared_ptr<wire::TapConnection> enclave_conn;
    std::optional<ra::SecureChannel> channel;
    enclave::WorkloadSpec spec{"linear_infer", "/data/model.bin", "/data/input.csv", "/data/output.csv", cfg.key_name};
    enclave::WorkloadInputs inputs;
    enclave::Matrix output;

    attest::CertChain user_chain;  // user side
    attest::Crl user_crl;
    crypto::PublicKey user_root;
    manifest::Measurement expected;
    crypto::Aes256GcmKey user_key = crypto::random_key();
    crypto::PublicKey verifier_pin;

    Plain plain = generate(cfg);
    enclave::LinearModel model{cfg.outputs, cfg.dims, {}, plain.b};
    for (const auto& row : plain.w) model.weights.insert(model.weights.end(), row.begin(), row.end());
    Bytes model_bytes = model.encode();
    std::string input_csv = enclave::format_csv(plain.x);
    auto reference = reference_run(plain);
    Snapshot before_run;

    auto run_step = [&](int n, const std::function<std::string()>& body) -> bool {
        auto t0 = std::chrono::steady_clock::now();
        auto& s = report.steps[n];
        try {
            s.detail = body();
            s.status = StepStatus::ok;
            s.millis = millis_since(t0);
            if (log) *log << step_label(n) << " " << s.title << ": " << s.detail << std::endl;
            return true;
        } catch (const std::exception& e) {
            auto f = classify(n, e);
            s.millis = millis_since(t0);
            auto& failed = report.steps[f.step];
            failed.status = StepStatus::failed;
            failed.detail = f.message;
            report.failed_step = f.step;
            report.exit_code = f.exit_code;
            report.error = f.message;
            if (log) *log << step_label(f.step) << " " << failed.title << ": FAILED: " << f.message << std::endl;
            return false;
        }
    };

    auto pcs_client = [&] { return attest::PcsClient(pcs_server->endpoint()); };

    bool ok = run_step(0, [&] {
        pcs_db = std::make_unique<attest::PcsDatabase>(attest::system_now());
        pcs_service = std::make_unique<attest::PcsService>(*pcs_db, attest::system_now, pcs_dir / "pcs-db.json");
        pcs_server = std::make_unique<wire::ConnectionServer>(
            cfg.pcs_listen, [&](wire::Connection& c) { pcs_service->handle(c); });
        trace(0, "pcs listening on " + pcs_server->endpoint().to_string());

        platform = pcs_client().register_platform(cfg.tcb_level);
        trace(0, "platform " + platform.identity.platform_id.hex() + " registered");
        if (cfg.variant == Variant::revoked_platform) {
            pcs_client().revoke(platform.identity.platform_id);
            trace(0, "platform revoked");
        }

        // Build time: the application files and the signed manifest. The
        // signer reports the measurement the user should expect.
        spit(cloud_dir / "app/linear_infer", as_bytes("#!enclave-runtime linear_infer 1.0\n"));
        spit(cloud_dir / "app/workload.json", as_bytes(json(spec).dump(2) + "\n"));
        spit(user_dir / "ppml.manifest.template", as_bytes(kManifestTemplate));
        auto tmpl = manifest::parse_template(kManifestTemplate);
        auto fm = manifest::sign_manifest(tmpl, manifest::host_resolver(tmpl, cloud_dir));
        spit(cloud_dir / "ppml.manifest.sgx", as_bytes(manifest::serialize(fm)));
        expected = manifest::compute_measurement(fm);
        report.expected_mr_enclave = expected.hex();
        trace(0, "manifest signed");
        return "platform " + platform.identity.platform_id.hex().substr(0, 16) + " tcb " +
               std::to_string(cfg.tcb_level) + (cfg.variant == Variant::revoked_platform ? " (revoked)" : "");
    });

    ok = ok && run_step(1, [&] {
        auto client = pcs_client();
        user_root = client.root_public_key();
        auto [chain, crl] = client.fetch(platform.identity.platform_id);
        if (!attest::verify_chain(chain, user_root)) {
            throw std::runtime_error("PCS returned a chain that does not verify");
        }
        user_chain = chain;
        user_crl = crl;
        trace(1, "chain and crl fetched");
        return "chain verified to root " + user_root.hex().substr(0, 16) + ", CRL #" + std::to_string(crl.sequence) +
               " with " + std::to_string(crl.revoked.size()) + " entries";
    });

    ok = ok && run_step(2, [&] {
        spit(user_dir / "model.bin", model_bytes);
        spit(user_dir / "input.csv", as_bytes(input_csv));
        enclave::user_encrypt_inputs({{user_dir / "model.bin", spec.model_path, cloud_dir / "data/model.bin"},
                                      {user_dir / "input.csv", spec.input_path, cloud_dir / "data/input.csv"}},
                                     user_key);
        trace(2, "model and input uploaded");
        if (cfg.variant == Variant::tampered_input) {
            // Data nodes come last in the container; hit one of them.
            auto path = cloud_dir / "data/input.csv";
            auto size = fs::file_size(path);
            flip_bit(path, size - pfs::kSealedNodeSize + 100, 3);
            trace(2, "input tampered in cloud storage");
        }

        attest::VerificationPolicy secret_policy;
        secret_policy.expected_mr_enclave = expected.mr_enclave;
        secret_policy.expected_mr_signer = enclave::demo_signer().mr_signer;
        prov::KeyVault vault;
        vault.put(cfg.key_name, {user_key.to_vector(), secret_policy});
        prov::vault_save(vault, ks_dir / "vault.pfs", "demo passphrase");
        trace(2, "vault written");
        return std::to_string(cfg.rows) + " rows x " + std::to_string(cfg.dims) + " features, model " +
               std::to_string(cfg.outputs) + "x" + std::to_string(cfg.dims);
    });

    if (ok) before_run = snapshot(root);

    ok = ok && run_step(3, [&] {
        // User side: start the secret provisioning service.
        prov::ServerConfig sc;
        sc.session_policy.expected_mr_signer = enclave::demo_signer().mr_signer;
        sc.session_policy.min_tcb_level = cfg.tcb_level;
        sc.session_policy.accepted_root = user_root;
        sc.verifier_key = crypto::signing_generate();
        auto pcs_ep = pcs_server->endpoint();
        sc.crl_source = [pcs_ep] { return attest::PcsClient(pcs_ep).current_crl(); };
        sc.clock = attest::system_now;
        sc.audit_log = ks_dir / "audit.jsonl";
        verifier_pin = sc.verifier_key.public_key;
        key_server = std::make_unique<prov::KeyServer>(prov::vault_load(ks_dir / "vault.pfs", "demo passphrase"), sc);
        ks_server = std::make_unique<wire::ConnectionServer>(
            cfg.keyserver_listen, [&](wire::Connection& c) { key_server->handle(c); },
            [&](const std::string& peer, const std::exception& e) {
                std::lock_guard lock(ks_errors_mu);
                ks_errors.push_back(peer + ": " + e.what());
            });
        trace(3, "key server listening on " + ks_server->endpoint().to_string());

        // Cloud side: deploy and start the enclave.
        if (cfg.variant == Variant::wrong_manifest) {
            auto tmpl = manifest::parse_template(std::string(kManifestTemplate) + kWrongManifestExtra);
            auto fm = manifest::sign_manifest(tmpl, manifest::host_resolver(tmpl, cloud_dir));
            spit(cloud_dir / "ppml.manifest.sgx", as_bytes(manifest::serialize(fm)));
            trace(3, "modified manifest deployed");
        }
        instance = enclave::EnclaveInstance::start_from_file(cloud_dir / "ppml.manifest.sgx", cloud_dir);
        instance->attach_platform(platform.identity, platform.chain);
        report.enclave_mr_enclave = instance->measurement().hex();
        trace(3, "enclave started");

        try {
            enclave_conn = std::make_shared<wire::TapConnection>(wire::tcp_connect(ks_server->endpoint()));
        } catch (const wire::WireError& e) {
            throw ra::HandshakeError(ra::HandshakeError::Kind::io, e.what());
        }
        enclave_conn->set_recv_timeout(prov::kIdleTimeout);
        trace(3, "enclave connected to key server");
        return "mr_enclave " + instance->measurement().hex().substr(0, 16) + ", connected to " +
               ks_server->endpoint().to_string();
    });

    ok = ok && run_step(4, [&] {
        channel.emplace(ra::attester_handshake(*enclave_conn, instance->quote_provider(), verifier_pin));
        trace(4, "handshake complete");
        return "quote accepted, channel bound to the enclave's key";
    });

    ok = ok && run_step(5, [&] {
        auto secret = prov::request_secret(*channel, cfg.key_name);
        instance->install_secret(cfg.key_name, std::move(secret));
        channel->close();
        channel.reset();
        trace(5, "key installed in enclave");
        return "'" + cfg.key_name + "' released";
    });

    ok = ok && run_step(6, [&] {
        auto workload_text = ppml::to_string(instance->read_trusted("/app/workload.json"));
        auto workload = json::parse(workload_text).get<enclave::WorkloadSpec>();
        spec = workload;
        inputs = enclave::load_workload_inputs(*instance, spec);
        trace(6, "model and input decrypted in enclave");
        return std::to_string(inputs.rows.size()) + " rows, model " + std::to_string(inputs.model.rows) + "x" +
               std::to_string(inputs.model.cols);
    });

    ok = ok && run_step(7, [&] {
        output = enclave::compute_workload(spec, inputs);
        trace(7, "inference done");
        return std::to_string(output.size()) + " predictions";
    });

    ok = ok && run_step(8, [&] {
        auto run = enclave::store_workload_output(*instance, spec, output);
        trace(8, "encrypted output written");
        // Back on the user's machine.
        auto plain_out = enclave::user_decrypt_output(cloud_dir / "data/output.csv", spec.output_path, user_key);
        spit(user_dir / "output.csv", plain_out);
        auto decrypted = enclave::parse_csv(ppml::to_string(plain_out));
        report.output_rows = run.rows;
        report.output_matches_reference = decrypted == reference;
        if (!report.output_matches_reference) {
            throw std::runtime_error("decrypted output differs from the reference run");
        }
        trace(8, "user decrypted output");
        return std::to_string(run.rows) + " rows, equal to the plaintext reference";
    });

    if (channel) channel->close();
    if (enclave_conn) enclave_conn->close();
    if (ks_server) ks_server->stop();
    if (pcs_server) pcs_server->stop();
    if (report.failed_step && !ks_errors.empty()) {
        report.steps[*report.failed_step].detail += " (key server: " + ks_errors.front() + ")";
    }

    // Confinement: no window of any plaintext in files written on the cloud
    // side or by the key server. The user's own directory is exempt.
    WindowSet windows;
    windows.add(model_bytes);
    windows.add(as_bytes(input_csv));
    windows.add(as_bytes(enclave::format_csv(reference)));
    if (fs::exists(root)) {
        auto after = snapshot(root);
        for (const auto& [rel, digest] : after) {
            if (rel.rfind("user/", 0) == 0) continue;
            auto it = before_run.find(rel);
            bool written_during_run = it == before_run.end() || it->second != digest;
            if (!written_during_run && rel.rfind("cloud/", 0) != 0) continue;
            ++report.files_scanned;
            if (windows.found_in(slurp(root / rel))) report.leaked_files.push_back(rel);
        }
    }
    if (enclave_conn) {
        auto key = user_key.to_vector();
        auto key_hex = to_hex(key);
        for (const auto& ev : enclave_conn->events()) {
            ++report.frames_tapped;
            if (contains(ev.frame.payload, key) || contains(ev.frame.payload, as_bytes(key_hex))) ++report.key_leaks;
        }
    }
    if (report.ok() && (!report.leaked_files.empty() || report.key_leaks != 0)) {
        report.exit_code = kExitOther;
        report.error = "confinement check failed";
    }

    report.total_millis = millis_since(t_start);
    if (temp_dir && !cfg.keep) {
        std::error_code ec;
        fs::remove_all(root, ec);
    }
    return report;
}

}  // namespace ppml::workflow
