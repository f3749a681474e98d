#include "spikemix/config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "spikemix/error.hpp"

namespace spikemix {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* what) {
    throw InvalidArgument("config key '" + key + "': '" + value + "' is not " + what);
}

template <typename T>
T parse_integer(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [p, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || p != end) bad_value(key, value, "a non-negative integer");
    return out;
}

}  // namespace

std::vector<std::string> split_list(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto pos = text.find(sep, start);
        const auto piece = trim(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (!piece.empty()) out.emplace_back(piece);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

Config Config::parse(std::string_view text) {
    Config cfg;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start < text.size()) {
        auto end = text.find('\n', start);
        if (end == std::string_view::npos) end = text.size();
        const auto line = trim(text.substr(start, end - start));
        start = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key=value, got '" +
                                  std::string(line) + "'");
        }
        const auto key = trim(line.substr(0, eq));
        if (key.empty()) throw InvalidArgument("config line " + std::to_string(line_no) + ": empty key");
        cfg.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
    }
    return cfg;
}

void Config::set(const std::string& key, std::string value) { values_[key] = std::move(value); }

void Config::merge(const Config& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string Config::get(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

std::size_t Config::get_size(const std::string& key, std::size_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_integer<std::size_t>(key, it->second);
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_integer<std::uint64_t>(key, it->second);
}

double Config::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::istringstream in(it->second);
    in.imbue(std::locale::classic());
    double v = 0.0;
    if (!(in >> v) || !(in >> std::ws).eof()) bad_value(key, it->second, "a number");
    return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string& v = it->second;
    if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
    if (v == "0" || v == "false" || v == "no" || v == "off") return false;
    bad_value(key, v, "a boolean");
}

std::vector<std::string> Config::get_list(const std::string& key, const std::string& fallback) const {
    return split_list(get(key, fallback));
}

std::vector<std::size_t> Config::get_size_list(const std::string& key, const std::string& fallback) const {
    std::vector<std::size_t> out;
    for (const auto& item : get_list(key, fallback)) out.push_back(parse_integer<std::size_t>(key, item));
    return out;
}

std::string Config::to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
}

void Config::require_known(const std::vector<std::string_view>& known) const {
    for (const auto& [k, v] : values_) {
        if (std::find(known.begin(), known.end(), k) == known.end()) {
            throw InvalidArgument("unknown config key '" + k + "'");
        }
    }
}

}  // namespace spikemix
