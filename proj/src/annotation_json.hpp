#pragma once

#include "json.hpp"

#include "odseg/annotation.hpp"

namespace odseg {

using json = nlohmann::json;

/// {"mode":"draw","width":3,"points":[[x,y],...],"t":ms}
json stroke_to_json(const Stroke& stroke);
/// Throws FormatError on a missing or mistyped field.
Stroke stroke_from_json(const json& j);
json record_to_json(const TracingRecord& record);

/// Identifiers end up in file names, so only [A-Za-z0-9_.-] without a
/// leading dot is accepted.
bool safe_name(const std::string& name);

}  // namespace odseg
