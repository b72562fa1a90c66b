#include "pbs/cells.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pbs/error.hpp"

namespace pbs {

namespace detail {
extern const char kBundledCellTypeMap[];
}

std::string_view to_string(Subtype s) {
  switch (s) {
    case Subtype::Basophil: return "Basophil";
    case Subtype::Eosinophil: return "Eosinophil";
    case Subtype::Lymphocyte: return "Lymphocyte";
    case Subtype::Monocyte: return "Monocyte";
    case Subtype::Neutrophil: return "Neutrophil";
    case Subtype::Others: return "Others";
  }
  return "Others";
}

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](unsigned char x, unsigned char y) {
           return std::tolower(x) == std::tolower(y);
         });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t canonical_index(Subtype s) { return static_cast<std::size_t>(s); }

}  // namespace

std::optional<Subtype> parse_subtype(std::string_view name) {
  name = trim(name);
  for (auto s : {Subtype::Basophil, Subtype::Eosinophil, Subtype::Lymphocyte, Subtype::Monocyte,
                 Subtype::Neutrophil, Subtype::Others})
    if (iequals(name, to_string(s))) return s;
  return std::nullopt;
}

double Differential::percent(Subtype s) const {
  return s == Subtype::Others ? 0.0 : percentages[canonical_index(s)];
}

std::vector<Instance> extract_instances(const InstanceMask& mask) {
  const auto size = mask.tile.size;
  if (mask.labels.rows() != size || mask.labels.cols() != size)
    throw ValidationError("mask for tile " + tile_key(mask.tile) + " is " +
                          std::to_string(mask.labels.cols()) + "x" +
                          std::to_string(mask.labels.rows()) + ", expected " +
                          std::to_string(size) + "x" + std::to_string(size));
  if ((mask.labels < 0).any())
    throw ValidationError("mask for tile " + tile_key(mask.tile) + " has negative labels");

  struct Acc {
    std::int64_t n = 0;
    double sx = 0.0, sy = 0.0;
    BoundingBox box{INT32_MAX, INT32_MAX, -1, -1};
  };
  std::map<std::int32_t, Acc> acc;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const auto id = mask.labels(y, x);
      if (id == 0) continue;
      auto& a = acc[id];
      ++a.n;
      a.sx += x;
      a.sy += y;
      a.box.x0 = std::min(a.box.x0, x);
      a.box.y0 = std::min(a.box.y0, y);
      a.box.x1 = std::max(a.box.x1, x);
      a.box.y1 = std::max(a.box.y1, y);
    }

  std::vector<Instance> out;
  for (const auto& [id, a] : acc) {
    const auto& b = a.box;
    if (b.x0 == 0 || b.y0 == 0 || b.x1 == size - 1 || b.y1 == size - 1) continue;
    out.push_back({id, a.sx / a.n, a.sy / a.n, b, a.n});
  }
  return out;
}

CropBox crop_square(const BoundingBox& bbox, double cx, double cy, double context_factor,
                    int tile_size) {
  if (!(context_factor >= 1.0) || !std::isfinite(context_factor))
    throw ValidationError("context factor must be a finite value >= 1");
  if (tile_size < 1) throw ValidationError("tile size must be positive");
  const double extent = std::max(bbox.width(), bbox.height());
  const int side =
      std::clamp(static_cast<int>(std::ceil(extent * context_factor)), 1, tile_size);
  // Pixel i spans [i, i+1); place the box centre on the centroid's pixel centre.
  auto place = [&](double c) {
    const int origin = static_cast<int>(std::floor(c + 1.0 - side / 2.0));
    return std::clamp(origin, 0, tile_size - side);
  };
  return {place(cx), place(cy), side};
}

LabelMap LabelMap::parse(std::string_view text) {
  LabelMap map;
  std::istringstream in{std::string(text)};
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto body = trim(line);
    if (body.empty() || body.front() == '#') continue;
    const auto tab = body.find('\t');
    const auto colon = body.find(':');
    if (tab == std::string_view::npos || colon == std::string_view::npos || colon > tab)
      throw ValidationError("label map line " + std::to_string(line_no) +
                            ": expected '<dataset>:<raw label>\\t<type>'");
    Row row{std::string(trim(body.substr(0, colon))),
            std::string(trim(body.substr(colon + 1, tab - colon - 1))), Subtype::Others};
    const auto type = parse_subtype(body.substr(tab + 1));
    if (!type)
      throw ValidationError("label map line " + std::to_string(line_no) +
                            ": unknown normalized type");
    row.subtype = *type;
    if (!map.index_.emplace(std::pair{row.dataset, row.raw_label}, row.subtype).second)
      throw ValidationError("label map line " + std::to_string(line_no) + ": duplicate key");
    map.rows_.push_back(std::move(row));
  }
  return map;
}

LabelMap LabelMap::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open label map " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const LabelMap& LabelMap::bundled() {
  static const LabelMap map = parse(detail::kBundledCellTypeMap);
  return map;
}

Subtype LabelMap::normalize(std::string_view dataset, std::string_view raw_label) const {
  const auto raw = trim(raw_label);
  if (dataset == "native" || dataset == "LISC") {
    if (auto s = parse_subtype(raw)) return *s;
    throw MappingMiss(std::string(dataset), std::string(raw));
  }
  const auto it = index_.find(std::pair{std::string(dataset), std::string(raw)});
  if (it == index_.end()) throw MappingMiss(std::string(dataset), std::string(raw));
  return it->second;
}

Differential differential(const std::vector<CellRecord>& cells, double min_confidence) {
  if (!(min_confidence >= 0.0 && min_confidence <= 1.0))
    throw ValidationError("min_confidence must lie in [0, 1]");
  Differential d;
  for (const auto& c : cells) {
    if (!(c.confidence >= min_confidence)) continue;
    if (c.subtype == Subtype::Others) {
      ++d.others_count;
    } else {
      ++d.counts[canonical_index(c.subtype)];
      ++d.n_cells;
    }
  }
  if (d.n_cells > 0)
    for (std::size_t i = 0; i < d.counts.size(); ++i)
      d.percentages[i] = 100.0 * static_cast<double>(d.counts[i]) / static_cast<double>(d.n_cells);
  return d;
}

void TableClassifier::add(const TileAddress& tile, std::int32_t instance_id, CellLabel label) {
  labels_[{tile_key(tile), instance_id}] = std::move(label);
}

std::optional<CellLabel> TableClassifier::classify(const TileAddress& tile,
                                                   const Instance& instance) const {
  const auto it = labels_.find({tile_key(tile), instance.id});
  if (it == labels_.end()) return std::nullopt;
  return it->second;
}

std::string cell_id(const TileAddress& tile, std::int32_t instance_id) {
  return tile_key(tile) + "_i" + std::to_string(instance_id);
}

std::vector<CellRecord> extract_cells(const InstanceMask& mask, const CellClassifier& classifier,
                                      double context_factor) {
  std::vector<CellRecord> out;
  for (const auto& inst : extract_instances(mask)) {
    auto label = classifier.classify(mask.tile, inst);
    if (!label) continue;
    if (!(label->confidence >= 0.0 && label->confidence <= 1.0))
      throw ContractViolation("classifier confidence outside [0, 1] for " +
                              cell_id(mask.tile, inst.id));
    out.push_back({cell_id(mask.tile, inst.id), mask.tile,
                   crop_square(inst.bbox, inst.cx, inst.cy, context_factor, mask.tile.size),
                   label->subtype, label->confidence, std::move(label->keywords)});
  }
  return out;
}

std::filesystem::path mask_path(const std::filesystem::path& dir, const TileAddress& tile) {
  return dir / (tile_key(tile) + ".pgm");
}

std::filesystem::path labels_path(const std::filesystem::path& dir, const TileAddress& tile) {
  return dir / (tile_key(tile) + ".labels.tsv");
}

namespace {

std::string pnm_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      if (!tok.empty()) break;
    } else if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(c);
    }
  }
  return tok;
}

int pnm_int(std::istream& in, const std::filesystem::path& path) {
  const auto tok = pnm_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ValidationError("malformed PGM data in " + path.string());
  }
}

}  // namespace

InstanceMask read_mask(const std::filesystem::path& path, const TileAddress& tile) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open mask " + path.string());
  const auto magic = pnm_token(in);
  if (magic != "P2" && magic != "P5")
    throw ValidationError(path.string() + " is not a PGM (P2/P5) mask");
  const int w = pnm_int(in, path), h = pnm_int(in, path), maxval = pnm_int(in, path);
  if (w != tile.size || h != tile.size)
    throw ValidationError("mask " + path.string() + " does not match the tile size");
  if (maxval < 1 || maxval > 65535) throw ValidationError("bad PGM maxval in " + path.string());
  InstanceMask mask{tile, LabelGrid::Zero(h, w)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int v;
      if (magic == "P2") {
        v = pnm_int(in, path);
      } else if (maxval < 256) {
        const int b = in.get();
        if (b == EOF) throw ValidationError("truncated mask " + path.string());
        v = b;
      } else {
        const int hi = in.get(), lo = in.get();
        if (lo == EOF) throw ValidationError("truncated mask " + path.string());
        v = (hi << 8) | lo;
      }
      mask.labels(y, x) = v;
    }
  return mask;
}

void write_mask(const std::filesystem::path& path, const InstanceMask& mask) {
  if ((mask.labels < 0).any() || (mask.labels > 65535).any())
    throw ValidationError("mask labels must fit in 16 bits for PGM output");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << "P5\n" << mask.labels.cols() << ' ' << mask.labels.rows() << "\n65535\n";
  for (Eigen::Index y = 0; y < mask.labels.rows(); ++y)
    for (Eigen::Index x = 0; x < mask.labels.cols(); ++x) {
      const auto v = mask.labels(y, x);
      out.put(static_cast<char>((v >> 8) & 0xff));
      out.put(static_cast<char>(v & 0xff));
    }
}

void read_labels(const std::filesystem::path& path, const TileAddress& tile,
                 std::string_view dataset, TableClassifier& into) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open labels " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty() || trim(line).front() == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 3)
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": expected instance_id, label, confidence[, keywords]");
    CellLabel label;
    std::int32_t id = 0;
    try {
      id = std::stoi(fields[0]);
      label.confidence = std::stod(fields[2]);
    } catch (const std::exception&) {
      throw ValidationError(path.string() + ":" + std::to_string(line_no) +
                            ": bad numeric field");
    }
    label.subtype = LabelMap::bundled().normalize(dataset, fields[1]);
    if (fields.size() > 3) {
      std::stringstream kw(fields[3]);
      std::string k;
      while (std::getline(kw, k, ';'))
        if (!trim(k).empty()) label.keywords.emplace_back(trim(k));
    }
    into.add(tile, id, std::move(label));
  }
}

void write_labels(const std::filesystem::path& path,
                  const std::vector<std::pair<std::int32_t, CellLabel>>& labels) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write labels " + path.string());
  out << std::setprecision(17);
  for (const auto& [id, label] : labels) {
    out << id << '\t' << to_string(label.subtype) << '\t' << label.confidence << '\t';
    for (std::size_t i = 0; i < label.keywords.size(); ++i)
      out << (i ? ";" : "") << label.keywords[i];
    out << '\n';
  }
}

}  // namespace pbs
