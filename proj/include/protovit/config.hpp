#pragma once

#include <map>
#include <string>

namespace protovit {

// Plain "key = value" config text with optional [section] headers; keys are
// returned as "section.key" ("" section for the preamble). '#' starts a
// comment. Values keep their exact text so they echo bit-identically into
// run metadata.
std::map<std::string, std::string> parse_config_file(const std::string &path);

}  // namespace protovit
