// Copyright 2026 The FFR Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FFR_CSV_HPP
#define FFR_CSV_HPP

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace ffr {

/// Formats with 17 significant digits so values survive a text round trip.
std::string format_number(double v);

/// Minimal comma-separated writer. Cells are written verbatim.
class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& file, const std::vector<std::string>& header);
  void row(const std::vector<double>& values);
  void row(const std::vector<std::string>& cells);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

/// Rows of a CSV file written by CsvWriter, header included.
std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& file);

}  // namespace ffr

#endif  // FFR_CSV_HPP
