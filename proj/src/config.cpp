#include "protovit/config.hpp"

#include <fstream>

#include "protovit/check.hpp"

namespace protovit {

namespace {

std::string strip(const std::string &s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> parse_config_file(const std::string &path) {
    std::ifstream in(path);
    PV_CHECK(in.good(), "cannot open config file: ", path);
    std::map<std::string, std::string> out;
    std::string line, section;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = strip(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            PV_CHECK(line.back() == ']', path, ":", lineno, ": unterminated section header");
            section = strip(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        PV_CHECK(eq != std::string::npos, path, ":", lineno, ": expected 'key = value'");
        std::string key = strip(line.substr(0, eq));
        std::string value = strip(line.substr(eq + 1));
        PV_CHECK(!key.empty(), path, ":", lineno, ": empty key");
        out[section.empty() ? key : section + "." + key] = value;
    }
    return out;
}

}  // namespace protovit
