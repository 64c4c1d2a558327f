#pragma once

#include <string>
#include <vector>

namespace mce {

/// Minimal CSV table: UTF-8, header row, '.' decimal separator. Fields in
/// this project never contain commas or quotes, so no escaping is done.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    static CsvTable read_file(const std::string& path);
    void write_file(const std::string& path) const;
    std::string to_string() const;

    int column(const std::string& name) const;  // -1 when absent
};

}  // namespace mce
