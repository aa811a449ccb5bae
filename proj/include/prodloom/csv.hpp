#pragma once

#include <string>
#include <vector>

#include "prodloom/common.hpp"

namespace prodloom {

// Minimal CSV layer for the pipeline's own schemas: UTF-8, header row,
// comma-separated, no quoting (identifiers and numbers only).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Column index by name; throws a schema error naming the column.
  std::size_t col(const std::string& name) const;
};

CsvTable read_csv(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<std::string>>& rows);

std::string csv_to_string(const std::vector<std::string>& header,
                          const std::vector<std::vector<std::string>>& rows);

double parse_double(const std::string& s, const std::string& context);
int parse_int(const std::string& s, const std::string& context);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace prodloom
