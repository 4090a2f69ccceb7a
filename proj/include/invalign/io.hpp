#pragma once

// Text encodings: JSON for configs and metric records, JSON Lines for run
// records, and a JSON-headed decimal dump for checkpoints. Every encoding is
// deterministic and round-trips doubles exactly. Parse errors throw
// std::invalid_argument naming the offending field.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "invalign/encoder.hpp"
#include "invalign/pgirm.hpp"
#include "invalign/trainer.hpp"
#include "invalign/worldgen.hpp"

namespace invalign {

std::string world_spec_to_json(const WorldSpec& spec);
/// Accepts either the explicit field set or {"preset": "standard", ...},
/// which expands through make_standard_world. The result is validated.
WorldSpec world_spec_from_json(std::string_view text);

std::string train_config_to_json(const TrainConfig& cfg);
/// Missing keys keep their defaults; unknown keys are rejected.
TrainConfig train_config_from_json(std::string_view text);

std::string metric_record_to_json(const MetricRecord& m);

/// One line per epoch, then one summary line over the last `last_k` epochs.
std::string run_record_to_jsonl(const RunRecord& record, std::size_t last_k);

struct ParsedRun {
    RunRecord record;
    std::optional<RunSummary> summary;  // absent when the run had no epochs
};
ParsedRun run_record_from_jsonl(std::string_view text);

struct Checkpoint {
    MlpEncoder encoder;
    HyperplaneSet hyperplanes;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;  // completed epochs

    friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::string checkpoint_to_text(const Checkpoint& ckpt);
Checkpoint checkpoint_from_text(std::string_view text);

void write_text_file(const std::filesystem::path& path, std::string_view contents);
/// Throws std::runtime_error if the file cannot be read.
std::string read_text_file(const std::filesystem::path& path);

}  // namespace invalign
