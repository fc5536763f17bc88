#pragma once

// Discussion datasets on disk: JSONL schema, label mapping, loading and the
// synthetic generator with planted context-dependent labels.
//
// One discussion per line:
//   {"id": "d1", "comments": [
//     {"id": "c", "parent": null, "text": "...", "image": "img/c.ppm", "label": "DEG"}, ...]}
// "image" and "label" may be null or absent. Image paths are relative to the
// directory holding the JSONL file.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdt/discussion.hpp"
#include "mdt/errors.hpp"
#include "mdt/image.hpp"
#include "mdt/model.hpp"
#include "mdt/model_config.hpp"
#include "mdt/rng.hpp"
#include "mdt/tokenizer.hpp"

namespace mdt {

namespace fs = std::filesystem;

// Source labels of the public hate-speech corpora the discussions were
// matched against, and their binary mapping.
inline const std::vector<std::pair<std::string, Label>>& source_labels() {
  static const std::vector<std::pair<std::string, Label>> table{
      {"DEG", Label::Hateful},
      {"LTI-person-directed-hate", Label::Hateful},
      {"CAD-identity-directed", Label::Hateful},
      {"CAD-affiliation-directed", Label::Hateful},
      {"NDG", Label::Neutral},
      {"HOM", Label::Neutral},
      {"LTI-neutral", Label::Neutral},
      {"CAD-neutral", Label::Neutral},
  };
  return table;
}

// Maps a source label (or an already binary "Hateful"/"Neutral") to the
// binary label.
inline Label map_label(const std::string& source) {
  for (const auto& [name, label] : source_labels())
    if (name == source) return label;
  if (source == "Hateful") return Label::Hateful;
  if (source == "Neutral") return Label::Neutral;
  std::string valid;
  for (const auto& [name, label] : source_labels()) valid += (valid.empty() ? "" : ", ") + name;
  throw DataError("unknown label '" + source + "' (valid: " + valid + ", Hateful, Neutral)");
}

struct Discussion {
  std::string id;
  DiscussionTree tree;
  std::vector<std::optional<PixelGrid>> images;  // per node in canonical order

  std::size_t image_count() const {
    return static_cast<std::size_t>(std::count_if(images.begin(), images.end(), [](const auto& g) { return g.has_value(); }));
  }
  std::size_t labeled_count() const {
    return static_cast<std::size_t>(
        std::count_if(tree.nodes().begin(), tree.nodes().end(), [](const CommentNode& c) { return c.label.has_value(); }));
  }
};

struct Dataset {
  std::vector<Discussion> discussions;
  fs::path root;  // directory image paths are relative to

  std::size_t comment_count() const {
    std::size_t n = 0;
    for (const auto& d : discussions) n += d.tree.size();
    return n;
  }
};

struct LoadOptions {
  bool strict = true;            // abort on the first bad line; otherwise skip it with a warning
  bool trim = true;
  TrimLimits limits{};
  bool require_images = false;   // drop discussions without any image
  bool load_images = true;
};

struct LoadReport {
  std::vector<std::string> warnings;
  std::size_t lines = 0;
  std::size_t skipped = 0;
  std::size_t dropped_without_images = 0;
};

namespace detail {

inline std::optional<std::string> optional_string(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw DataError(std::string("field '") + key + "' must be a string or null");
  return it->get<std::string>();
}

// Resolves an image reference under the dataset root, refusing paths that
// escape it.
inline fs::path resolve_image(const fs::path& root, const std::string& ref) {
  const fs::path rel(ref);
  if (rel.is_absolute()) throw DataError("image path '" + ref + "' must be relative to the dataset directory");
  for (const auto& part : rel)
    if (part == "..") throw DataError("image path '" + ref + "' escapes the dataset directory");
  return root / rel;
}

inline Discussion parse_discussion(const std::string& line, const fs::path& root, const LoadOptions& opt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw DataError("expected a JSON object");
  Discussion d;
  auto id = j.find("id");
  if (id == j.end() || !(id->is_string() || id->is_number_integer())) throw DataError("missing discussion 'id'");
  d.id = id->is_string() ? id->get<std::string>() : std::to_string(id->get<long long>());
  auto comments = j.find("comments");
  if (comments == j.end() || !comments->is_array() || comments->empty())
    throw DataError("discussion " + d.id + ": 'comments' must be a non-empty array");

  std::vector<CommentRecord> records;
  for (const auto& c : *comments) {
    if (!c.is_object()) throw DataError("discussion " + d.id + ": comment entries must be objects");
    CommentRecord r;
    auto cid = optional_string(c, "id");
    if (!cid) throw DataError("discussion " + d.id + ": comment without 'id'");
    r.id = *cid;
    r.parent_id = optional_string(c, "parent");
    r.text = optional_string(c, "text").value_or("");
    r.image_ref = optional_string(c, "image");
    if (auto lab = optional_string(c, "label")) r.label = map_label(*lab);
    records.push_back(std::move(r));
  }
  d.tree = build_tree(records);
  if (opt.trim) d.tree = trim(d.tree, opt.limits);
  if (d.tree.size() > kMaxDiscussionSize)
    throw DataError("discussion " + d.id + " has " + std::to_string(d.tree.size()) + " comments, limit is " +
                    std::to_string(kMaxDiscussionSize));
  d.images.resize(d.tree.size());
  if (opt.load_images) {
    for (std::size_t i = 0; i < d.tree.size(); ++i)
      if (const auto& ref = d.tree.node(i).image_ref) d.images[i] = read_ppm(resolve_image(root, *ref).string());
  }
  return d;
}

}  // namespace detail

inline Dataset load_dataset(const fs::path& path, const LoadOptions& opt = {}, LoadReport* report = nullptr) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dataset " + path.string());
  Dataset ds;
  ds.root = path.parent_path();
  LoadReport local;
  LoadReport& rep = report ? *report : local;
  std::set<std::string> seen;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    ++rep.lines;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    try {
      auto d = detail::parse_discussion(line, ds.root, opt);
      if (!seen.insert(d.id).second) throw DataError("duplicate discussion id '" + d.id + "'");
      if (opt.require_images && d.image_count() == 0) {
        ++rep.dropped_without_images;
        continue;
      }
      ds.discussions.push_back(std::move(d));
    } catch (const DataError& e) {
      const std::string msg = path.string() + ":" + std::to_string(lineno) + ": " + e.what();
      if (opt.strict) throw DataError(msg);
      rep.warnings.push_back(msg);
      ++rep.skipped;
    }
  }
  return ds;
}

// One JSONL line in canonical form: nodes in canonical order, binary labels.
inline std::string discussion_to_json(const Discussion& d) {
  nlohmann::ordered_json j;
  j["id"] = d.id;
  auto comments = nlohmann::ordered_json::array();
  for (const auto& n : d.tree.nodes()) {
    nlohmann::ordered_json c;
    c["id"] = n.id;
    c["parent"] = n.parent_index ? nlohmann::ordered_json(d.tree.node(*n.parent_index).id) : nullptr;
    c["text"] = n.text;
    c["image"] = n.image_ref ? nlohmann::ordered_json(*n.image_ref) : nullptr;
    c["label"] = n.label ? nlohmann::ordered_json(label_name(*n.label)) : nullptr;
    comments.push_back(std::move(c));
  }
  j["comments"] = std::move(comments);
  return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
}

// Writes the JSONL file only; image files are referenced, not copied.
inline void save_dataset(const Dataset& ds, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write dataset " + path.string());
  for (const auto& d : ds.discussions) out << discussion_to_json(d) << '\n';
}

inline std::vector<std::string> dataset_texts(const Dataset& ds, const std::vector<std::size_t>& which) {
  std::vector<std::string> texts;
  for (auto i : which)
    for (const auto& n : ds.discussions.at(i).tree.nodes()) texts.push_back(n.text);
  return texts;
}

// Encodes one discussion for the model. Images must already be
// image_size x image_size.
inline DiscussionInput make_input(const Discussion& d, const Tokenizer& tok, const ModelConfig& cfg) {
  DiscussionInput in;
  in.id = d.id;
  std::vector<std::string> texts;
  for (const auto& n : d.tree.nodes()) {
    in.comment_ids.push_back(n.id);
    texts.push_back(n.text);
    in.targets.push_back(n.label ? static_cast<int>(*n.label) : -1);
  }
  in.text = tok.encode_batch(texts, cfg.max_len);
  in.images.resize(d.tree.size());
  if (cfg.use_images) {
    for (std::size_t i = 0; i < d.tree.size(); ++i) {
      if (i >= d.images.size() || !d.images[i]) continue;
      const auto& g = *d.images[i];
      if (g.height != cfg.image_size || g.width != cfg.image_size)
        throw ShapeError("discussion " + d.id + ", comment " + d.tree.node(i).id + ": image is " +
                         std::to_string(g.height) + "x" + std::to_string(g.width) + ", model expects " +
                         std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
      in.images[i] = patchify(g, cfg.patch_size);
    }
  }
  in.structure = structure_matrices(d.tree, cfg.window, cfg.root_parent_bonus);
  return in;
}

// ---------------------------------------------------------------------------
// Synthetic discussions with planted labels.
//
// Every non-root comment is labeled. A comment is Hateful iff
//   - its text holds the trigger token, or
//   - its text holds the ambiguous token and an ancestor at most two hops up
//     holds the context token, or
//   - its text holds the ambiguous token and a sibling carries an image whose
//     top-left marker patch is pure red.
// The symmetric spatial index does not tell a parent from a child, so the
// context token is scrubbed from descendants within two hops of ambiguous
// comments; the rule stays a function of what the graph layers can see.

struct SynthConfig {
  std::uint64_t seed = 1;
  std::size_t discussions = 200;
  std::size_t vocab_size = 24;  // filler words
  double image_rate = 0.3;
  double ambiguous_rate = 0.35;
  double trigger_rate = 0.15;
  double context_rate = 0.35;
  double marker_rate = 0.5;     // share of images carrying the red marker
  std::size_t min_comments = 4;
  std::size_t max_comments = 12;
  std::size_t min_words = 3;
  std::size_t max_words = 6;
  std::size_t image_size = 16;
  std::size_t marker_size = 4;
  TrimLimits limits{};

  void validate() const {
    if (discussions == 0) throw ConfigError("synth: discussions must be at least 1");
    if (vocab_size == 0) throw ConfigError("synth: vocab_size must be positive");
    if (min_comments < 1 || min_comments > max_comments) throw ConfigError("synth: need 1 <= min_comments <= max_comments");
    if (min_words > max_words) throw ConfigError("synth: min_words must not exceed max_words");
    if (marker_size == 0 || marker_size > image_size) throw ConfigError("synth: marker_size must fit in the image");
    for (double p : {image_rate, ambiguous_rate, trigger_rate, context_rate, marker_rate})
      if (p < 0.0 || p > 1.0) throw ConfigError("synth: rates must be in [0, 1]");
    if (ambiguous_rate + trigger_rate > 1.0) throw ConfigError("synth: ambiguous_rate + trigger_rate must not exceed 1");
  }
};

template <class C, class V>
  requires std::same_as<std::remove_const_t<C>, SynthConfig>
void visit_fields(C& c, V&& v) {
  v("seed", c.seed);
  v("discussions", c.discussions);
  v("vocab_size", c.vocab_size);
  v("image_rate", c.image_rate);
  v("ambiguous_rate", c.ambiguous_rate);
  v("trigger_rate", c.trigger_rate);
  v("context_rate", c.context_rate);
  v("marker_rate", c.marker_rate);
  v("min_comments", c.min_comments);
  v("max_comments", c.max_comments);
  v("min_words", c.min_words);
  v("max_words", c.max_words);
  v("image_size", c.image_size);
  v("marker_size", c.marker_size);
  v("max_branching", c.limits.max_branching);
  v("max_depth", c.limits.max_depth);
}

inline constexpr const char* kTriggerToken = "trig";
inline constexpr const char* kContextToken = "ctx";
inline constexpr const char* kAmbiguousToken = "amb";

// Rule category of one synthetic comment, as listed in the manifest.
enum class SynthCategory { Root, Plain, Trigger, AmbiguousContext, AmbiguousImage, AmbiguousNeutral };

inline const char* category_name(SynthCategory c) {
  switch (c) {
    case SynthCategory::Root: return "root";
    case SynthCategory::Plain: return "plain";
    case SynthCategory::Trigger: return "trigger";
    case SynthCategory::AmbiguousContext: return "ambiguous_context";
    case SynthCategory::AmbiguousImage: return "ambiguous_image";
    case SynthCategory::AmbiguousNeutral: return "ambiguous_neutral";
  }
  return "?";
}

struct SynthComment {
  std::string discussion;
  std::string comment;
  SynthCategory category;
  std::optional<Label> label;
};

struct SynthImage {
  std::string ref;  // relative path
  std::vector<std::uint8_t> ppm;
};

struct SynthOutput {
  std::string jsonl;
  std::vector<SynthImage> images;
  std::vector<SynthComment> manifest;
  std::string manifest_json;
};

namespace detail {

struct SynthNode {
  std::size_t parent = SIZE_MAX;
  std::size_t depth = 0;
  std::vector<std::size_t> children;
  std::vector<std::string> words;
  bool trigger = false, context = false, ambiguous = false;
  bool has_image = false, marker = false;
};

inline bool is_ancestor_within(const std::vector<SynthNode>& nodes, std::size_t anc, std::size_t node, std::size_t hops) {
  std::size_t x = node;
  for (std::size_t h = 0; h < hops && nodes[x].parent != SIZE_MAX; ++h) {
    x = nodes[x].parent;
    if (x == anc) return true;
  }
  return false;
}

inline std::vector<std::uint8_t> synth_pixels(Rng& rng, const SynthConfig& cfg, bool marker) {
  const std::size_t s = cfg.image_size;
  std::vector<std::uint8_t> rgb(s * s * 3);
  for (auto& v : rgb) v = static_cast<std::uint8_t>(rng.below(256));
  for (std::size_t y = 0; y < cfg.marker_size; ++y)
    for (std::size_t x = 0; x < cfg.marker_size; ++x) {
      auto* px = &rgb[(y * s + x) * 3];
      if (marker) {
        px[0] = 255;
        px[1] = 0;
        px[2] = 0;
      } else {
        // Keep unmarked corners visibly different from the marker.
        px[0] = static_cast<std::uint8_t>(px[0] / 2);
        px[1] = static_cast<std::uint8_t>(64 + px[1] / 2);
      }
    }
  return rgb;
}

}  // namespace detail

inline SynthOutput synth_generate(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  SynthOutput out;
  std::ostringstream jsonl;
  for (std::size_t di = 0; di < cfg.discussions; ++di) {
    char dbuf[32];
    std::snprintf(dbuf, sizeof dbuf, "d%04zu", di);
    const std::string did = dbuf;

    const std::size_t size = cfg.min_comments + rng.below(cfg.max_comments - cfg.min_comments + 1);
    std::vector<detail::SynthNode> nodes(1);
    for (std::size_t k = 1; k < size; ++k) {
      std::vector<std::size_t> open;
      for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].children.size() < cfg.limits.max_branching && nodes[i].depth < cfg.limits.max_depth)
          open.push_back(i);
      if (open.empty()) break;
      const std::size_t p = open[rng.below(open.size())];
      detail::SynthNode n;
      n.parent = p;
      n.depth = nodes[p].depth + 1;
      nodes[p].children.push_back(nodes.size());
      nodes.push_back(std::move(n));
    }

    for (std::size_t i = 0; i < nodes.size(); ++i) {
      auto& n = nodes[i];
      const std::size_t words = cfg.min_words + rng.below(cfg.max_words - cfg.min_words + 1);
      for (std::size_t w = 0; w < words; ++w) n.words.push_back("w" + std::to_string(rng.below(cfg.vocab_size)));
      if (i > 0) {
        const double u = rng.uniform();
        n.ambiguous = u < cfg.ambiguous_rate;
        n.trigger = !n.ambiguous && u < cfg.ambiguous_rate + cfg.trigger_rate;
      }
      n.context = !n.ambiguous && !n.trigger && rng.bernoulli(cfg.context_rate);
      n.has_image = rng.bernoulli(cfg.image_rate);
      n.marker = n.has_image && rng.bernoulli(cfg.marker_rate);
    }
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i].ambiguous) continue;
      for (std::size_t j = 0; j < nodes.size(); ++j)
        if (detail::is_ancestor_within(nodes, i, j, 2)) nodes[j].context = false;
    }

    nlohmann::ordered_json j;
    j["id"] = did;
    auto comments = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const auto& n = nodes[i];
      auto words = n.words;
      const char* special = n.trigger ? kTriggerToken : n.context ? kContextToken : n.ambiguous ? kAmbiguousToken : nullptr;
      if (special) words.insert(words.begin() + static_cast<std::ptrdiff_t>(rng.below(words.size() + 1)), special);
      std::string text;
      for (const auto& w : words) text += (text.empty() ? "" : " ") + w;

      SynthCategory cat = SynthCategory::Root;
      std::optional<Label> label;
      if (i > 0) {
        bool ctx = false, img = false;
        for (std::size_t a = 0; a < nodes.size(); ++a)
          if (nodes[a].context && detail::is_ancestor_within(nodes, a, i, 2)) ctx = true;
        for (auto s : nodes[n.parent].children)
          if (s != i && nodes[s].marker) img = true;
        if (n.trigger) cat = SynthCategory::Trigger;
        else if (n.ambiguous && ctx) cat = SynthCategory::AmbiguousContext;
        else if (n.ambiguous && img) cat = SynthCategory::AmbiguousImage;
        else if (n.ambiguous) cat = SynthCategory::AmbiguousNeutral;
        else cat = SynthCategory::Plain;
        const bool hateful = cat == SynthCategory::Trigger || cat == SynthCategory::AmbiguousContext ||
                             cat == SynthCategory::AmbiguousImage;
        label = hateful ? Label::Hateful : Label::Neutral;
      }

      const std::string cid = "c" + std::to_string(i);
      nlohmann::ordered_json c;
      c["id"] = cid;
      c["parent"] = i == 0 ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json("c" + std::to_string(n.parent));
      c["text"] = text;
      if (n.has_image) {
        const std::string ref = "images/" + did + "_" + cid + ".ppm";
        c["image"] = ref;
        const auto rgb = detail::synth_pixels(rng, cfg, n.marker);
        out.images.push_back({ref, encode_ppm(cfg.image_size, cfg.image_size, rgb)});
      } else {
        c["image"] = nullptr;
      }
      c["label"] = label ? nlohmann::ordered_json(label_name(*label)) : nlohmann::ordered_json(nullptr);
      comments.push_back(std::move(c));
      out.manifest.push_back({did, cid, cat, label});
    }
    j["comments"] = std::move(comments);
    jsonl << j.dump() << '\n';
  }
  out.jsonl = jsonl.str();

  nlohmann::ordered_json m;
  nlohmann::ordered_json cfg_json;
  visit_fields(cfg, [&](const char* name, const auto& field) { cfg_json[name] = field; });
  m["config"] = std::move(cfg_json);
  std::map<std::string, std::size_t> counts;
  auto rows = nlohmann::ordered_json::array();
  for (const auto& c : out.manifest) {
    ++counts[category_name(c.category)];
    nlohmann::ordered_json r;
    r["discussion"] = c.discussion;
    r["comment"] = c.comment;
    r["category"] = category_name(c.category);
    r["label"] = c.label ? nlohmann::ordered_json(label_name(*c.label)) : nlohmann::ordered_json(nullptr);
    rows.push_back(std::move(r));
  }
  nlohmann::ordered_json cj;
  for (const auto& [k, v] : counts) cj[k] = v;
  m["counts"] = std::move(cj);
  m["comments"] = std::move(rows);
  out.manifest_json = m.dump(1) + "\n";
  return out;
}

// Writes discussions.jsonl, images/ and manifest.json under dir.
inline fs::path write_synth(const SynthOutput& s, const fs::path& dir) {
  fs::create_directories(dir / "images");
  auto write = [](const fs::path& p, const void* data, std::size_t n) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw DataError("cannot write " + p.string());
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  };
  const fs::path jsonl = dir / "discussions.jsonl";
  write(jsonl, s.jsonl.data(), s.jsonl.size());
  for (const auto& img : s.images) write(dir / img.ref, img.ppm.data(), img.ppm.size());
  write(dir / "manifest.json", s.manifest_json.data(), s.manifest_json.size());
  return jsonl;
}

}  // namespace mdt
