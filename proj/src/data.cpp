#include "mmfuse/data.hpp"

#include <array>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmfuse/error.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

namespace {

using nlohmann::json;

const std::array<const char*, 4> kColors = {"red", "blue", "green", "yellow"};
const std::array<const char*, 4> kShapes = {"circle", "square", "triangle",
                                            "star"};

// --- base64 for the little-endian float payloads ---

const char* kB64 =
    "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

std::string b64_encode(const std::vector<float>& v) {
  std::vector<unsigned char> bytes(v.size() * 4);
  for (size_t i = 0; i < v.size(); ++i) {
    uint32_t bits;
    static_assert(sizeof(float) == 4, "float must be 32-bit");
    std::memcpy(&bits, &v[i], 4);
    bytes[i * 4 + 0] = static_cast<unsigned char>(bits & 0xff);
    bytes[i * 4 + 1] = static_cast<unsigned char>((bits >> 8) & 0xff);
    bytes[i * 4 + 2] = static_cast<unsigned char>((bits >> 16) & 0xff);
    bytes[i * 4 + 3] = static_cast<unsigned char>((bits >> 24) & 0xff);
  }
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  for (size_t i = 0; i < bytes.size(); i += 3) {
    uint32_t chunk = static_cast<uint32_t>(bytes[i]) << 16;
    int have = 1;
    if (i + 1 < bytes.size()) {
      chunk |= static_cast<uint32_t>(bytes[i + 1]) << 8;
      have = 2;
    }
    if (i + 2 < bytes.size()) {
      chunk |= bytes[i + 2];
      have = 3;
    }
    out.push_back(kB64[(chunk >> 18) & 63]);
    out.push_back(kB64[(chunk >> 12) & 63]);
    out.push_back(have > 1 ? kB64[(chunk >> 6) & 63] : '=');
    out.push_back(have > 2 ? kB64[chunk & 63] : '=');
  }
  return out;
}

std::vector<float> b64_decode(const std::string& s, size_t expected_floats) {
  auto val = [](char c) -> int {
    if (c >= 'A' && c <= 'Z') return c - 'A';
    if (c >= 'a' && c <= 'z') return c - 'a' + 26;
    if (c >= '0' && c <= '9') return c - '0' + 52;
    if (c == '+') return 62;
    if (c == '/') return 63;
    if (c == '=') return -1;
    throw IoError("invalid base64 character in video payload");
  };
  std::vector<unsigned char> bytes;
  bytes.reserve(s.size() / 4 * 3);
  for (size_t i = 0; i + 3 < s.size(); i += 4) {
    const int a = val(s[i]), b = val(s[i + 1]), c = val(s[i + 2]),
              d = val(s[i + 3]);
    if (a < 0 || b < 0) throw IoError("malformed base64 video payload");
    bytes.push_back(static_cast<unsigned char>((a << 2) | (b >> 4)));
    if (c >= 0) bytes.push_back(static_cast<unsigned char>((b << 4) | (c >> 2)));
    if (c >= 0 && d >= 0)
      bytes.push_back(static_cast<unsigned char>((c << 6) | d));
  }
  if (bytes.size() != expected_floats * 4) {
    throw IoError("video payload holds " + std::to_string(bytes.size() / 4) +
                  " floats, expected " + std::to_string(expected_floats));
  }
  std::vector<float> out(expected_floats);
  for (size_t i = 0; i < expected_floats; ++i) {
    uint32_t bits = static_cast<uint32_t>(bytes[i * 4 + 0]) |
                    (static_cast<uint32_t>(bytes[i * 4 + 1]) << 8) |
                    (static_cast<uint32_t>(bytes[i * 4 + 2]) << 16) |
                    (static_cast<uint32_t>(bytes[i * 4 + 3]) << 24);
    std::memcpy(&out[i], &bits, 4);
  }
  return out;
}

// --- question templates ---

enum QuestionKind { kColorAt = 0, kShapeAt = 1, kMajorityShape = 2 };

std::string question_text(const std::array<int, 3>& q) {
  std::ostringstream os;
  switch (q[0]) {
    case kColorAt:
      os << "what color is region " << q[2] << " of frame " << q[1] << " ?";
      break;
    case kShapeAt:
      os << "what shape is in region " << q[2] << " of frame " << q[1]
         << " ?";
      break;
    default:
      os << "what shape appears most in frame " << q[1] << " ?";
      break;
  }
  return os.str();
}

int majority_shape(const LatentRecord& lat, int frame, int regions) {
  std::array<int, 4> counts{0, 0, 0, 0};
  for (int p = 0; p < regions; ++p) {
    counts[static_cast<size_t>(
        lat.shapes[static_cast<size_t>(frame * regions + p)])] += 1;
  }
  int best = 0;
  for (int s = 1; s < 4; ++s) {
    if (counts[static_cast<size_t>(s)] > counts[static_cast<size_t>(best)]) {
      best = s;  // ties keep the lower shape index
    }
  }
  return best;
}

int majority_color(const LatentRecord& lat) {
  std::array<int, 4> counts{0, 0, 0, 0};
  for (int c : lat.colors) counts[static_cast<size_t>(c)] += 1;
  int best = 0;
  for (int s = 1; s < 4; ++s) {
    if (counts[static_cast<size_t>(s)] > counts[static_cast<size_t>(best)]) {
      best = s;
    }
  }
  return best;
}

std::vector<std::string> paraphrases(const std::string& answer,
                                     int question_kind) {
  std::vector<std::string> refs;
  refs.push_back(answer);
  refs.push_back("it is " + answer);
  refs.push_back("the answer is " + answer);
  if (question_kind == kMajorityShape) {
    refs.push_back("mostly " + answer);
    refs.push_back(answer + " appears most");
  } else {
    refs.push_back("that one is " + answer);
  }
  return refs;
}

json record_to_json(const CorpusRecord& rec) {
  json turns = json::array();
  for (const auto& [q, a] : rec.turns) turns.push_back(json::array({q, a}));
  json refs = json::array();
  for (const auto& r : rec.references) refs.push_back(r);
  return json{{"type", "record"},
              {"id", rec.id},
              {"split", rec.split},
              {"caption", rec.caption},
              {"turns", turns},
              {"target", rec.target},
              {"references", refs},
              {"video",
               json{{"f", rec.video.shape[0]},
                    {"p", rec.video.shape[1]},
                    {"d_emb", rec.video.shape[2]},
                    {"data", b64_encode(rec.video.data)}}}};
}

CorpusRecord record_from_json(const json& j, size_t line_index) {
  auto fail = [line_index](const std::string& why) -> IoError {
    return IoError("corpus record " + std::to_string(line_index) + ": " + why);
  };
  CorpusRecord rec;
  try {
    rec.id = j.at("id").get<std::string>();
    rec.split = j.at("split").get<std::string>();
    rec.caption = j.at("caption").get<std::string>();
    for (const auto& t : j.at("turns")) {
      rec.turns.emplace_back(t.at(0).get<std::string>(),
                             t.at(1).get<std::string>());
    }
    rec.target = j.at("target").get<std::string>();
    for (const auto& r : j.at("references")) {
      rec.references.push_back(r.get<std::string>());
    }
    const auto& v = j.at("video");
    const int f = v.at("f").get<int>();
    const int p = v.at("p").get<int>();
    const int d = v.at("d_emb").get<int>();
    if (f < 1 || p < 1 || d < 1) throw fail("non-positive video geometry");
    Tensor<float> grid({f, p, d});
    grid.data = b64_decode(v.at("data").get<std::string>(),
                           static_cast<size_t>(f) * p * d);
    rec.video = std::move(grid);
  } catch (const json::exception& e) {
    throw fail(e.what());
  }
  if (rec.turns.empty()) throw fail("no turns");
  if (rec.target.empty()) throw fail("empty target");
  if (rec.references.empty()) throw fail("missing references");
  if (!rec.turns.back().second.empty()) {
    throw fail("last turn must leave the system half empty");
  }
  return rec;
}

}  // namespace

const CorpusRecord* Corpus::find(const std::string& id) const {
  for (const auto& r : records) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

std::vector<const CorpusRecord*> Corpus::split(const std::string& name) const {
  std::vector<const CorpusRecord*> out;
  for (const auto& r : records) {
    if (r.split == name) out.push_back(&r);
  }
  return out;
}

std::string oracle_answer(const LatentRecord& latent, int turn_index,
                          int regions) {
  const auto& q = latent.questions[static_cast<size_t>(turn_index)];
  switch (q[0]) {
    case kColorAt:
      return kColors[static_cast<size_t>(
          latent.colors[static_cast<size_t>(q[1] * regions + q[2])])];
    case kShapeAt:
      return kShapes[static_cast<size_t>(
          latent.shapes[static_cast<size_t>(q[1] * regions + q[2])])];
    default:
      return kShapes[static_cast<size_t>(
          majority_shape(latent, q[1], regions))];
  }
}

Corpus generate_corpus(const CorpusGenConfig& cfg,
                       std::vector<LatentRecord>* latents_out) {
  if (cfg.n_train < 1 || cfg.n_val < 0 || cfg.n_test < 0) {
    throw ContractError("corpus needs at least one training dialogue");
  }
  if (cfg.frames < 1 || cfg.regions < 1 || cfg.d_emb < 1 ||
      cfg.turns_per_dialogue < 1 || cfg.noise < 0) {
    throw ContractError("invalid corpus geometry");
  }
  Corpus corpus;
  corpus.frames = cfg.frames;
  corpus.regions = cfg.regions;
  corpus.d_emb = cfg.d_emb;

  Rng rng(cfg.seed);
  // One fixed embedding per (color, shape) pair; records add gaussian noise.
  std::vector<std::vector<float>> attr_table(16);
  for (auto& v : attr_table) {
    v.resize(static_cast<size_t>(cfg.d_emb));
    for (auto& x : v) x = static_cast<float>(rng.normal());
  }

  const int cells = cfg.frames * cfg.regions;
  auto make_record = [&](const std::string& split, int index) {
    LatentRecord lat;
    CorpusRecord rec;
    rec.split = split;
    {
      std::ostringstream os;
      os << split << "-" << index;
      rec.id = os.str();
      lat.id = rec.id;
    }
    lat.colors.resize(static_cast<size_t>(cells));
    lat.shapes.resize(static_cast<size_t>(cells));
    Tensor<float> grid({cfg.frames, cfg.regions, cfg.d_emb});
    for (int i = 0; i < cells; ++i) {
      const int c = static_cast<int>(rng.below(4));
      const int s = static_cast<int>(rng.below(4));
      lat.colors[static_cast<size_t>(i)] = c;
      lat.shapes[static_cast<size_t>(i)] = s;
      const auto& base = attr_table[static_cast<size_t>(c * 4 + s)];
      float* dst = grid.data.data() + static_cast<size_t>(i) * cfg.d_emb;
      for (int e = 0; e < cfg.d_emb; ++e) {
        dst[e] = base[static_cast<size_t>(e)] +
                 static_cast<float>(rng.normal() * cfg.noise);
      }
    }
    rec.video = std::move(grid);
    rec.caption = std::string("most regions are ") +
                  kColors[static_cast<size_t>(majority_color(lat))];

    // Distinct questions within a dialogue, so history never answers the
    // current question. Color/shape lookups dominate; frame-majority
    // questions are rarer.
    std::set<std::array<int, 3>> used;
    while (static_cast<int>(lat.questions.size()) < cfg.turns_per_dialogue) {
      const uint32_t pick = rng.below(10);
      std::array<int, 3> q;
      if (pick < 4) {
        q = {kColorAt, static_cast<int>(rng.below(
                           static_cast<uint32_t>(cfg.frames))),
             static_cast<int>(rng.below(static_cast<uint32_t>(cfg.regions)))};
      } else if (pick < 8) {
        q = {kShapeAt, static_cast<int>(rng.below(
                           static_cast<uint32_t>(cfg.frames))),
             static_cast<int>(rng.below(static_cast<uint32_t>(cfg.regions)))};
      } else {
        q = {kMajorityShape,
             static_cast<int>(rng.below(static_cast<uint32_t>(cfg.frames))),
             0};
      }
      if (used.insert(q).second) lat.questions.push_back(q);
    }
    for (int t = 0; t < cfg.turns_per_dialogue; ++t) {
      const std::string q = question_text(lat.questions[static_cast<size_t>(t)]);
      const std::string a = oracle_answer(lat, t, cfg.regions);
      if (t + 1 < cfg.turns_per_dialogue) {
        rec.turns.emplace_back(q, a);
      } else {
        rec.turns.emplace_back(q, "");
        rec.target = a;
        rec.references =
            paraphrases(a, lat.questions[static_cast<size_t>(t)][0]);
      }
    }
    if (latents_out != nullptr) latents_out->push_back(std::move(lat));
    corpus.records.push_back(std::move(rec));
  };

  for (int i = 0; i < cfg.n_train; ++i) make_record("train", i);
  for (int i = 0; i < cfg.n_val; ++i) make_record("val", i);
  for (int i = 0; i < cfg.n_test; ++i) make_record("test", i);

  // Vocabulary in first-appearance order over all text fields.
  for (const auto& rec : corpus.records) {
    auto absorb = [&corpus](const std::string& text) {
      for (const auto& tok : Vocabulary::split_lower(text)) {
        corpus.vocab.add(tok);
      }
    };
    absorb(rec.caption);
    for (const auto& [q, a] : rec.turns) {
      absorb(q);
      absorb(a);
    }
    absorb(rec.target);
    for (const auto& r : rec.references) absorb(r);
  }
  if (corpus.vocab.size() > 200) {
    throw ContractError("synthetic vocabulary grew past 200 tokens");
  }
  return corpus;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open corpus file for writing: " + path);
  json header{{"type", "header"},
              {"version", 1},
              {"f", corpus.frames},
              {"p", corpus.regions},
              {"d_emb", corpus.d_emb},
              {"vocab", corpus.vocab.tokens()}};
  out << header.dump() << "\n";
  for (const auto& rec : corpus.records) {
    out << record_to_json(rec).dump() << "\n";
  }
  if (!out) throw IoError("short write to corpus file: " + path);
}

void for_each_record(
    const std::string& path,
    const std::function<void(const Corpus& header)>& on_header,
    const std::function<void(CorpusRecord&&)>& on_record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus file: " + path);
  std::string line;
  size_t line_index = 0;
  bool saw_header = false;
  Corpus header;
  while (std::getline(in, line)) {
    if (line.empty()) {
      ++line_index;
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("corpus line " + std::to_string(line_index) +
                    " is not valid JSON: " + e.what());
    }
    if (!saw_header) {
      if (j.value("type", "") != "header") {
        throw IoError("corpus file must start with a header record");
      }
      try {
        header.frames = j.at("f").get<int>();
        header.regions = j.at("p").get<int>();
        header.d_emb = j.at("d_emb").get<int>();
        const auto toks = j.at("vocab").get<std::vector<std::string>>();
        for (size_t i = 5; i < toks.size(); ++i) header.vocab.add(toks[i]);
        for (size_t i = 0; i < std::min<size_t>(5, toks.size()); ++i) {
          if (toks[i] != header.vocab.token(static_cast<int>(i))) {
            throw IoError("corpus header specials are not [PAD..UNK]");
          }
        }
      } catch (const json::exception& e) {
        throw IoError(std::string("corpus header: ") + e.what());
      }
      saw_header = true;
      if (on_header) on_header(header);
    } else {
      CorpusRecord rec = record_from_json(j, line_index);
      if (rec.video.shape[0] != header.frames ||
          rec.video.shape[1] != header.regions ||
          rec.video.shape[2] != header.d_emb) {
        throw IoError("corpus record " + std::to_string(line_index) +
                      ": video geometry disagrees with header");
      }
      if (on_record) on_record(std::move(rec));
    }
    ++line_index;
  }
  if (!saw_header) throw IoError("corpus file is empty: " + path);
}

Corpus load_corpus(const std::string& path) {
  Corpus corpus;
  for_each_record(
      path,
      [&corpus](const Corpus& header) {
        corpus.frames = header.frames;
        corpus.regions = header.regions;
        corpus.d_emb = header.d_emb;
        corpus.vocab = header.vocab;
      },
      [&corpus](CorpusRecord&& rec) { corpus.records.push_back(std::move(rec)); });
  return corpus;
}

DialogueInstance to_instance(const CorpusRecord& rec, const Vocabulary& vocab) {
  DialogueInstance inst;
  inst.id = rec.id;
  inst.caption = vocab.encode(rec.caption);
  for (const auto& [q, a] : rec.turns) {
    inst.turns.emplace_back(vocab.encode(q), vocab.encode(a));
  }
  inst.target = vocab.encode(rec.target);
  inst.target.push_back(kEosId);
  for (const auto& r : rec.references) {
    inst.references.push_back(vocab.encode(r));
  }
  return inst;
}

}  // namespace mmfuse
