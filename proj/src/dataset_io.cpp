#include "keyloco/sim/dataset_io.hpp"

#include "json.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

static_assert(std::endian::native == std::endian::little,
              "dataset binary format assumes a little-endian host");

namespace keyloco::sim {

using nlohmann::json;

void save_dataset(const std::string& path, const ReferenceDataset& ds, DatasetFormat format) {
  json header;
  header["clips"] = json::array();
  for (const auto& c : ds.clips) header["clips"].push_back(c.frames);
  header["format"] = (format == DatasetFormat::bin_f32) ? "bin_f32" : "csv";
  header["fps"] = ds.fps;
  header["nj"] = ds.nj;
  header["version"] = 1;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dataset save: cannot open " + path);
  out << header.dump() << "\n";

  if (format == DatasetFormat::bin_f32) {
    std::vector<float> buf;
    for (const auto& c : ds.clips) {
      buf.assign(c.data.begin(), c.data.end());
      out.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
  } else {
    char num[40];
    for (const auto& c : ds.clips) {
      for (int f = 0; f < c.frames; ++f) {
        for (int col = 0; col < c.cols(); ++col) {
          std::snprintf(num, sizeof(num), "%.17g", c.at(f, col));
          if (col) out << ',';
          out << num;
        }
        out << '\n';
      }
    }
  }
  if (!out) throw std::runtime_error("dataset save: write failed for " + path);
}

ReferenceDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset load: cannot open " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw std::runtime_error("dataset load: missing header");

  json header = json::parse(header_line);
  ReferenceDataset ds;
  ds.fps = header.at("fps").get<int>();
  ds.nj = header.at("nj").get<int>();
  const std::string fmt = header.at("format").get<std::string>();
  if (fmt != "bin_f32" && fmt != "csv")
    throw std::runtime_error("dataset load: unknown format '" + fmt + "'");

  std::vector<int> frame_counts = header.at("clips").get<std::vector<int>>();
  for (int frames : frame_counts) {
    Clip c;
    c.nj = ds.nj;
    c.frames = frames;
    c.data.resize(static_cast<size_t>(frames) * c.cols());
    if (fmt == "bin_f32") {
      std::vector<float> buf(c.data.size());
      in.read(reinterpret_cast<char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
      if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float)))
        throw std::runtime_error("dataset load: truncated binary section");
      for (size_t i = 0; i < buf.size(); ++i) c.data[i] = buf[i];
    } else {
      std::string line;
      for (int f = 0; f < frames; ++f) {
        if (!std::getline(in, line)) throw std::runtime_error("dataset load: truncated csv section");
        std::stringstream ss(line);
        std::string cell;
        for (int col = 0; col < c.cols(); ++col) {
          if (!std::getline(ss, cell, ','))
            throw std::runtime_error("dataset load: short csv row");
          c.at(f, col) = std::stod(cell);
        }
      }
    }
    ds.clips.push_back(std::move(c));
  }
  return ds;
}

}  // namespace keyloco::sim
