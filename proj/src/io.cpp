#include "pbs/io.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>

#include "pbs/error.hpp"

namespace pbs::io {

namespace {

const Json& field(const Json& j, const char* name) {
  if (!j.is_object()) throw ValidationError("expected a JSON object");
  auto it = j.find(name);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + name + "'");
  return *it;
}

template <typename T>
T get(const Json& j, const char* name) {
  const Json& v = field(j, name);
  try {
    return v.get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ValidationError(std::string("field '") + name + "' has the wrong type");
  }
}

std::vector<std::string> string_list(const Json& j, const char* name) {
  const Json& v = field(j, name);
  if (!v.is_array()) throw ValidationError(std::string("field '") + name + "' must be an array");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string())
      throw ValidationError(std::string("field '") + name + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

template <typename E>
E enum_field(const Json& j, const char* name, std::optional<E> (*parse)(std::string_view)) {
  const auto s = get<std::string>(j, name);
  auto v = parse(s);
  if (!v) throw ValidationError(std::string("field '") + name + "': unknown value '" + s + "'");
  return *v;
}

TileAddress tile_from_json(const Json& j) {
  TileAddress t;
  t.slide_id = get<std::string>(j, "slide_id");
  t.row = get<int>(j, "row");
  t.col = get<int>(j, "col");
  t.size = get<int>(j, "size");
  if (t.row < 0 || t.col < 0 || t.size < 1) throw ValidationError("invalid tile address");
  return t;
}

}  // namespace

Json to_json(const TileAddress& t) {
  return Json{{"slide_id", t.slide_id}, {"row", t.row}, {"col", t.col}, {"size", t.size}};
}

Json to_json(const ScoredTile& t) {
  Json j = to_json(t.address);
  j["quality"] = t.quality;
  j["kept"] = t.kept;
  return j;
}

ScoredTile scored_tile_from_json(const Json& j) {
  ScoredTile t{tile_from_json(j), get<double>(j, "quality"), get<bool>(j, "kept")};
  return t;
}

Json to_json(const CellRecord& c) {
  std::string kind(to_string(c.subtype));
  return Json{{"id", c.id},
              {"tile", to_json(c.tile)},
              {"crop", Json{{"x0", c.crop.x0}, {"y0", c.crop.y0}, {"side", c.crop.side}}},
              {"subtype", kind},
              {"confidence", c.confidence},
              {"keywords", c.keywords}};
}

CellRecord cell_from_json(const Json& j) {
  CellRecord c;
  c.id = get<std::string>(j, "id");
  c.tile = tile_from_json(field(j, "tile"));
  const Json& crop = field(j, "crop");
  c.crop = {get<int>(crop, "x0"), get<int>(crop, "y0"), get<int>(crop, "side")};
  c.subtype = enum_field<Subtype>(j, "subtype", parse_subtype);
  c.confidence = get<double>(j, "confidence");
  c.keywords = string_list(j, "keywords");
  return c;
}

Json to_json(const Differential& d) {
  Json counts = Json::object(), pct = Json::object();
  for (std::size_t i = 0; i < kCanonicalSubtypes.size(); ++i) {
    const std::string name(to_string(kCanonicalSubtypes[i]));
    counts[name] = d.counts[i];
    pct[name] = d.percentages[i];
  }
  return Json{{"n_cells", d.n_cells},
              {"others_count", d.others_count},
              {"counts", counts},
              {"percentages", pct}};
}

Differential differential_from_json(const Json& j) {
  Differential d;
  d.n_cells = get<std::int64_t>(j, "n_cells");
  d.others_count = get<std::int64_t>(j, "others_count");
  const Json& counts = field(j, "counts");
  const Json& pct = field(j, "percentages");
  for (std::size_t i = 0; i < kCanonicalSubtypes.size(); ++i) {
    const std::string name(to_string(kCanonicalSubtypes[i]));
    d.counts[i] = get<std::int64_t>(counts, name.c_str());
    d.percentages[i] = get<double>(pct, name.c_str());
  }
  return d;
}

Json to_json(const SlideSummary& s) {
  return Json{{"slide_id", s.slide_id},
              {"diagnosis", std::string(to_string(s.diagnosis))},
              {"differential", to_json(s.differential)},
              {"findings", s.findings}};
}

SlideSummary slide_from_json(const Json& j) {
  SlideSummary s;
  s.slide_id = get<std::string>(j, "slide_id");
  s.diagnosis = enum_field<Diagnosis>(j, "diagnosis", parse_diagnosis);
  s.differential = differential_from_json(field(j, "differential"));
  s.findings = string_list(j, "findings");
  return s;
}

Json to_json(const QAItem& q) {
  return Json{{"id", q.id},
              {"level", std::string(to_string(q.level))},
              {"task", std::string(to_string(q.task))},
              {"qtype", std::string(to_string(q.qtype))},
              {"image_ref", q.image_ref},
              {"question", q.question},
              {"options", q.options},
              {"answer", q.answer},
              {"seed", q.seed}};
}

QAItem qa_from_json(const Json& j) {
  QAItem q;
  q.id = get<std::string>(j, "id");
  q.level = enum_field<Level>(j, "level", parse_level);
  q.task = enum_field<Task>(j, "task", parse_task);
  q.qtype = enum_field<QType>(j, "qtype", parse_qtype);
  q.image_ref = get<std::string>(j, "image_ref");
  q.question = get<std::string>(j, "question");
  q.options = string_list(j, "options");
  q.answer = get<std::string>(j, "answer");
  q.seed = get<std::uint64_t>(j, "seed");
  return q;
}

Json to_json(const Prediction& p) {
  return Json{{"qa_id", p.qa_id}, {"prediction", p.prediction}};
}

Prediction prediction_from_json(const Json& j) {
  return {get<std::string>(j, "qa_id"), get<std::string>(j, "prediction")};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& rows) {
  std::string text;
  for (const auto& r : rows) {
    text += r.dump();
    text += '\n';
  }
  write_text(path, text);
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(int, const Json&)>& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto where = path.string() + ":" + std::to_string(number) + ": ";
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(where + "invalid JSON");
    }
    try {
      fn(number, j);
    } catch (const ValidationError& e) {
      throw ValidationError(where + e.what());
    }
  }
}

namespace {

template <typename T, typename Decode>
std::vector<T> read_all(const std::filesystem::path& path, Decode decode) {
  std::vector<T> out;
  for_each_jsonl(path, [&](int, const Json& j) { out.push_back(decode(j)); });
  return out;
}

}  // namespace

std::vector<ScoredTile> read_tiles(const std::filesystem::path& path) {
  return read_all<ScoredTile>(path, scored_tile_from_json);
}
std::vector<CellRecord> read_cells(const std::filesystem::path& path) {
  return read_all<CellRecord>(path, cell_from_json);
}
std::vector<SlideSummary> read_slides(const std::filesystem::path& path) {
  return read_all<SlideSummary>(path, slide_from_json);
}
std::vector<QAItem> read_qa(const std::filesystem::path& path) {
  return read_all<QAItem>(path, qa_from_json);
}
std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  return read_all<Prediction>(path, prediction_from_json);
}

std::int64_t ManifestStats::total() const {
  std::int64_t t = 0;
  for (const auto& [key, n] : counts) t += n;
  return t;
}

void ManifestStats::add(const std::string& split, const QAItem& item) {
  ++counts[{split, item.level, item.task, item.qtype}];
}

std::string ManifestStats::to_csv() const {
  std::ostringstream out;
  out << "split,level,task,qtype,count\n";
  for (const auto& [key, n] : counts) {
    const auto& [split, level, task, qtype] = key;
    out << split << ',' << to_string(level) << ',' << to_string(task) << ','
        << to_string(qtype) << ',' << n << '\n';
  }
  out << "total,,,," << total() << '\n';
  return out.str();
}

ManifestStats stats_of(const std::vector<QAItem>& items, const std::string& split) {
  ManifestStats s;
  for (const auto& item : items) s.add(split, item);
  return s;
}

ManifestReport validate_manifest(const std::filesystem::path& path, const std::string& split) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open manifest " + path.string());
  ManifestReport report;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    QAItem item;
    try {
      item = qa_from_json(Json::parse(line));
    } catch (const nlohmann::json::exception&) {
      report.errors.push_back({number, "invalid JSON"});
      continue;
    } catch (const ValidationError& e) {
      report.errors.push_back({number, e.what()});
      continue;
    }
    const auto violations = item_violations(item);
    if (!violations.empty()) {
      std::string msg;
      for (const auto& v : violations) msg += (msg.empty() ? "" : "; ") + v;
      report.errors.push_back({number, msg});
      continue;
    }
    report.stats.add(split, item);
  }
  return report;
}

std::vector<EvalRecord> join_predictions(const std::vector<QAItem>& items,
                                         const std::vector<Prediction>& preds,
                                         std::size_t* unmatched) {
  std::unordered_map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) by_id[p.qa_id] = &p;
  std::vector<EvalRecord> out;
  out.reserve(items.size());
  std::size_t used = 0;
  for (const auto& item : items) {
    auto it = by_id.find(item.id);
    if (it != by_id.end()) ++used;
    out.push_back(make_eval_record(item, it == by_id.end() ? std::string() : it->second->prediction));
  }
  if (unmatched) *unmatched = by_id.size() - used;
  return out;
}

}  // namespace pbs::io
