// Copyright 2026 The hepaseg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// MetaImage (.mhd + .raw) reader and writer for the uncompressed,
// little-endian subset used throughout the toolkit.

#ifndef HEPASEG_METAIO_HPP
#define HEPASEG_METAIO_HPP

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "hepaseg/error.hpp"
#include "hepaseg/keyvalue.hpp"
#include "hepaseg/volume.hpp"

namespace hepaseg {

enum class ElementType { kShort, kUChar, kFloat };

inline const char* to_string(ElementType t) {
  switch (t) {
    case ElementType::kShort: return "MET_SHORT";
    case ElementType::kUChar: return "MET_UCHAR";
    case ElementType::kFloat: return "MET_FLOAT";
  }
  return "?";
}

struct MetaHeader {
  int ndims = 3;
  std::vector<std::size_t> dims;
  std::vector<double> spacing;
  ElementType type = ElementType::kFloat;
  std::string data_file;

  std::size_t element_count() const {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

using AnyVolume = std::variant<CtVolume, RealVolume, LabelVolume, ProbVolume>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}


template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& value) {
  std::vector<T> out;
  std::istringstream in(value);
  std::string tok;
  while (in >> tok) {
    T v{};
    const auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (r.ec != std::errc() || r.ptr != tok.data() + tok.size())
      throw DataError("malformed MetaImage header: bad value '" + tok + "' for " + key);
    out.push_back(v);
  }
  return out;
}

template <typename T>
void byteswap_inplace(std::vector<T>& v) {
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    for (auto& x : v) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &x, sizeof(T));
      for (std::size_t k = 0; k < sizeof(T) / 2; ++k) std::swap(b[k], b[sizeof(T) - 1 - k]);
      std::memcpy(&x, b, sizeof(T));
    }
  }
}

template <typename T>
std::vector<T> read_raw(const std::filesystem::path& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open raw data file " + path.string());
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes != count * sizeof(T))
    throw DataError("element count mismatch in " + path.string() + ": header declares " +
                    std::to_string(count) + " elements, file holds " +
                    std::to_string(bytes / sizeof(T)) +
                    (bytes % sizeof(T) ? " (plus trailing bytes)" : ""));
  in.seekg(0);
  std::vector<T> out(count);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw DataError("short read from " + path.string());
  byteswap_inplace(out);
  return out;
}

template <typename T>
void write_raw(const std::filesystem::path& path, std::vector<T> data) {
  byteswap_inplace(data);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) throw DataError("write failed for " + path.string());
}

inline void write_header(const std::filesystem::path& mhd, const MetaHeader& h) {
  std::ostringstream s;
  s << "ObjectType = Image\n";
  s << "NDims = " << h.ndims << "\n";
  s << "DimSize =";
  for (auto d : h.dims) s << ' ' << d;
  s << "\nElementSpacing =";
  for (auto v : h.spacing) s << ' ' << format_real(v);
  s << "\nElementType = " << to_string(h.type) << "\n";
  s << "ElementByteOrderMSB = False\n";
  s << "ElementDataFile = " << h.data_file << "\n";
  std::ofstream out(mhd, std::ios::trunc);
  if (!out) throw DataError("cannot write " + mhd.string());
  out << s.str();
  if (!out) throw DataError("write failed for " + mhd.string());
}

inline std::filesystem::path raw_path_for(const std::filesystem::path& mhd) {
  auto raw = mhd;
  raw.replace_extension(".raw");
  return raw;
}

inline MetaHeader header_for(const Grid& g, ElementType t, const std::filesystem::path& mhd) {
  MetaHeader h;
  h.ndims = 3;
  h.dims = {g.dims[0], g.dims[1], g.dims[2]};
  h.spacing = {g.spacing[0], g.spacing[1], g.spacing[2]};
  h.type = t;
  h.data_file = raw_path_for(mhd).filename().string();
  return h;
}

}  // namespace detail

inline MetaHeader read_meta_header(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed MetaImage header line: " + line);
    kv[detail::trim(line.substr(0, eq))] = detail::trim(line.substr(eq + 1));
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw DataError("malformed MetaImage header: missing " + key);
    return it->second;
  };
  if (auto it = kv.find("ObjectType"); it != kv.end() && it->second != "Image")
    throw DataError("unsupported ObjectType " + it->second);
  if (auto it = kv.find("CompressedData"); it != kv.end() && it->second != "False")
    throw DataError("compressed MetaImage data is not supported");
  if (auto it = kv.find("ElementByteOrderMSB"); it != kv.end() && it->second != "False")
    throw DataError("big-endian MetaImage data is not supported");
  if (auto it = kv.find("BinaryDataByteOrderMSB"); it != kv.end() && it->second != "False")
    throw DataError("big-endian MetaImage data is not supported");

  MetaHeader h;
  const auto nd = detail::parse_list<int>("NDims", need("NDims"));
  if (nd.size() != 1 || (nd[0] != 3 && nd[0] != 4))
    throw DataError("unsupported NDims (only 3 or 4)");
  h.ndims = nd[0];
  h.dims = detail::parse_list<std::size_t>("DimSize", need("DimSize"));
  if (h.dims.size() != std::size_t(h.ndims)) throw DataError("DimSize does not match NDims");
  for (auto d : h.dims)
    if (d == 0) throw DataError("DimSize entries must be positive");
  if (kv.count("ElementSpacing")) {
    h.spacing = detail::parse_list<double>("ElementSpacing", kv["ElementSpacing"]);
  } else if (kv.count("ElementSize")) {
    h.spacing = detail::parse_list<double>("ElementSize", kv["ElementSize"]);
  } else {
    h.spacing.assign(std::size_t(h.ndims), 1.0);
  }
  if (h.spacing.size() != std::size_t(h.ndims))
    throw DataError("ElementSpacing does not match NDims");
  for (int a = 0; a < 3; ++a)
    if (!(h.spacing[std::size_t(a)] > 0.0) || !std::isfinite(h.spacing[std::size_t(a)]))
      throw DataError("non-positive voxel spacing in " + path.string());
  const std::string& type = need("ElementType");
  if (type == "MET_SHORT") h.type = ElementType::kShort;
  else if (type == "MET_UCHAR") h.type = ElementType::kUChar;
  else if (type == "MET_FLOAT") h.type = ElementType::kFloat;
  else throw DataError("unsupported ElementType " + type);
  h.data_file = need("ElementDataFile");
  if (h.data_file == "LOCAL" || h.data_file == "LIST")
    throw DataError("ElementDataFile must name a separate raw file");
  if (h.ndims == 4 && h.type != ElementType::kFloat)
    throw DataError("4-D MetaImage volumes must be MET_FLOAT probabilities");
  return h;
}

/// Loads whichever volume kind the header describes.
inline AnyVolume load_volume(const std::filesystem::path& path) {
  const MetaHeader h = read_meta_header(path);
  const auto raw = path.parent_path() / h.data_file;
  Grid g{{h.dims[0], h.dims[1], h.dims[2]}, {h.spacing[0], h.spacing[1], h.spacing[2]}};
  const std::size_t count = h.element_count();
  switch (h.type) {
    case ElementType::kShort: return CtVolume(g, detail::read_raw<std::int16_t>(raw, count));
    case ElementType::kUChar: return LabelVolume(g, detail::read_raw<std::uint8_t>(raw, count));
    case ElementType::kFloat:
      if (h.ndims == 3) return RealVolume(g, detail::read_raw<float>(raw, count));
      {
        ProbVolume p(g, h.dims[3], detail::read_raw<float>(raw, count));
        if (!(p.normalization_error() <= 1e-5))
          throw DataError("probability volume " + path.string() + " is not normalized");
        return p;
      }
  }
  throw DataError("unsupported element type");
}

inline const char* volume_kind(const AnyVolume& v) {
  switch (v.index()) {
    case 0: return "CT volume (MET_SHORT)";
    case 1: return "real volume (MET_FLOAT)";
    case 2: return "label volume (MET_UCHAR)";
    default: return "probability volume (4-D MET_FLOAT)";
  }
}

/// Loads a volume and insists on a particular kind.
template <typename V>
V load_as(const std::filesystem::path& path) {
  AnyVolume any = load_volume(path);
  if (auto* v = std::get_if<V>(&any)) return std::move(*v);
  throw DataError(path.string() + " holds a " + volume_kind(any) + ", which is not expected here");
}

/// CT intensities as floats, accepting either MET_SHORT or 3-D MET_FLOAT.
inline RealVolume load_intensity(const std::filesystem::path& path) {
  AnyVolume any = load_volume(path);
  if (auto* ct = std::get_if<CtVolume>(&any)) return convert<float>(*ct);
  if (auto* r = std::get_if<RealVolume>(&any)) return std::move(*r);
  throw DataError(path.string() + " holds a " + volume_kind(any) + ", expected an image");
}

inline void save_volume(const CtVolume& v, const std::filesystem::path& path) {
  detail::write_raw(detail::raw_path_for(path), v.storage());
  detail::write_header(path, detail::header_for(v.grid(), ElementType::kShort, path));
}

inline void save_volume(const LabelVolume& v, const std::filesystem::path& path) {
  detail::write_raw(detail::raw_path_for(path), v.storage());
  detail::write_header(path, detail::header_for(v.grid(), ElementType::kUChar, path));
}

inline void save_volume(const RealVolume& v, const std::filesystem::path& path) {
  detail::write_raw(detail::raw_path_for(path), v.storage());
  detail::write_header(path, detail::header_for(v.grid(), ElementType::kFloat, path));
}

inline void save_volume(const ProbVolume& v, const std::filesystem::path& path) {
  detail::write_raw(detail::raw_path_for(path), std::vector<float>(v.data().begin(), v.data().end()));
  auto h = detail::header_for(v.grid(), ElementType::kFloat, path);
  h.ndims = 4;
  h.dims.push_back(v.classes());
  h.spacing.push_back(1.0);
  detail::write_header(path, h);
}

inline void save_volume(const AnyVolume& v, const std::filesystem::path& path) {
  std::visit([&](const auto& x) { save_volume(x, path); }, v);
}

}  // namespace hepaseg

#endif  // HEPASEG_METAIO_HPP
