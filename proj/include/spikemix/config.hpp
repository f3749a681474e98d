#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace spikemix {

// Flat key=value settings. Blank lines and lines starting with '#' are
// skipped; a key given twice keeps the later value.
class Config {
public:
    Config() = default;

    static Config parse(std::string_view text);

    void set(const std::string& key, std::string value);
    bool has(const std::string& key) const { return values_.count(key) != 0; }
    // Entries of `other` replace ours.
    void merge(const Config& other);

    std::string get(const std::string& key, const std::string& fallback) const;
    std::size_t get_size(const std::string& key, std::size_t fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<std::string> get_list(const std::string& key, const std::string& fallback) const;
    std::vector<std::size_t> get_size_list(const std::string& key, const std::string& fallback) const;

    // Sorted by key, one "key=value" per line.
    std::string to_text() const;
    const std::map<std::string, std::string>& entries() const { return values_; }

    // Throws InvalidArgument naming the first key not in `known`.
    void require_known(const std::vector<std::string_view>& known) const;

private:
    std::map<std::string, std::string> values_;
};

std::vector<std::string> split_list(std::string_view text, char sep = ',');

}  // namespace spikemix
