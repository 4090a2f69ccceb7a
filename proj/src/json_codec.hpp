#pragma once

// JSON value conversions shared by io.cpp and cli.cpp. Private to the
// library so the vendored json.hpp never leaks into public headers.

#include <string_view>

#include "invalign/trainer.hpp"
#include "invalign/worldgen.hpp"
#include "json.hpp"

namespace invalign::detail {

using Json = nlohmann::ordered_json;

/// Parses `text`, rethrowing syntax errors as std::invalid_argument.
Json parse_json(std::string_view text, std::string_view what);

Json to_json_value(const WorldSpec& spec);
WorldSpec world_spec_from(const Json& j);

Json to_json_value(const TrainConfig& cfg);
/// Starts from `base` and overrides the keys present in `j`.
TrainConfig train_config_from(const Json& j, const TrainConfig& base = {});

Json to_json_value(const MetricRecord& m);
Json to_json_value(const RunSummary& s);

/// Throws std::invalid_argument if `j` is not an object or has a key outside
/// `allowed`.
void require_keys(const Json& j, std::initializer_list<std::string_view> allowed,
                  std::string_view what);

}  // namespace invalign::detail
