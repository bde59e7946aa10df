#pragma once

// End-to-end deployment demo. Three parties run in one process and talk only
// over loopback TCP: the PCS, the user's key server, and the cloud host
// running the enclave. Steps are numbered ① to ⑧; ⓪ is setup.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "ppml/wire.hpp"

namespace ppml::workflow {

enum class Variant { none, revoked_platform, tampered_input, wrong_manifest };

std::string_view to_string(Variant v);
/// Throws std::invalid_argument.
Variant parse_variant(std::string_view name);

struct DemoConfig {
    /// Empty means a fresh temp directory, removed afterwards unless keep.
    std::filesystem::path work_dir;
    bool keep = false;
    Variant variant = Variant::none;
    std::uint32_t rows = 64;     // input rows
    std::uint32_t dims = 8;      // model input width
    std::uint32_t outputs = 4;   // model output width
    std::uint64_t seed = 1;
    std::uint32_t tcb_level = 3;
    std::string key_name = "pfs-master";
    wire::Endpoint pcs_listen{"127.0.0.1", 0};
    wire::Endpoint keyserver_listen{"127.0.0.1", 0};

    /// `key = value` lines, '#' comments, values optionally double-quoted.
    /// Unknown keys and bad values throw std::invalid_argument.
    static DemoConfig parse(std::string_view text);
};

enum class StepStatus { ok, failed, skipped };

struct StepResult {
    int step = 0;
    std::string title;
    StepStatus status = StepStatus::skipped;
    std::string detail;
    double millis = 0;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitAttestation = 1;
inline constexpr int kExitIntegrity = 2;
inline constexpr int kExitOther = 3;

struct DemoReport {
    Variant variant = Variant::none;
    std::vector<StepResult> steps;  // ⓪..⑧
    std::optional<int> failed_step;
    int exit_code = kExitOk;
    std::string error;

    std::string expected_mr_enclave;
    std::string enclave_mr_enclave;
    std::size_t output_rows = 0;
    bool output_matches_reference = false;

    // Confinement checks.
    std::size_t files_scanned = 0;
    std::vector<std::string> leaked_files;  // relative to work_dir
    std::size_t frames_tapped = 0;
    std::size_t key_leaks = 0;

    /// Side effects in the order they happened, each prefixed with its step.
    std::vector<std::string> trace;
    double total_millis = 0;
    std::string work_dir;

    bool ok() const { return exit_code == kExitOk; }
};

nlohmann::json to_json(const DemoReport& r);
std::string step_table(const DemoReport& r);
std::string_view step_label(int step);

/// Runs the whole flow. Progress lines go to `log` when set. Never throws for
/// a failing step; the report carries the step and exit code.
DemoReport workflow_demo(const DemoConfig& config, std::ostream* log = nullptr);

}  // namespace ppml::workflow
