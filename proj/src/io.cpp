#include "mast/io.hpp"

#include "mast/errors.hpp"

#include <fmt/format.h>

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace mast {

namespace {

constexpr int kDatasetVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kMagic[8] = {'M', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};

template <typename T>
void get(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(fmt::format("invalid value for '{}': {}", key, e.what()));
  }
}

std::array<double, 9> row_major(const Mat3& m) {
  std::array<double, 9> a{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) a[static_cast<std::size_t>(3 * r + c)] = m(r, c);
  }
  return a;
}

Mat3 from_row_major(const Json& j) {
  const auto a = j.get<std::vector<double>>();
  if (a.size() != 9) throw IoError("rotation must have 9 entries");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m(r, c) = a[static_cast<std::size_t>(3 * r + c)];
  }
  return m;
}

Json pose_json(const Pose& p) {
  return {{"rotation", row_major(p.rotation)},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

Pose pose_from_json(const Json& j) {
  Pose p;
  p.rotation = from_row_major(j.at("rotation"));
  const auto t = j.at("translation").get<std::vector<double>>();
  if (t.size() != 3) throw IoError("translation must have 3 entries");
  p.translation = Vec3(t[0], t[1], t[2]);
  return p;
}

Json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t n) {
  try {
    return Json::parse(line);
  } catch (const Json::exception& e) {
    throw IoError(fmt::format("{}:{}: malformed record: {}", path.string(), n, e.what()));
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) throw IoError(path.string() + ": empty file");
  return lines;
}

}  // namespace

void check_keys(const Json& j, std::initializer_list<const char*> allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError(fmt::format("{}: unknown key '{}'", section, it.key()));
  }
}

Json to_json(const AnchorSpec& a) {
  return {{"n_rot", a.n_rot}, {"n_vx", a.n_vx}, {"n_vy", a.n_vy}, {"n_z", a.n_z}, {"v_min", a.v_min},
          {"v_max", a.v_max}, {"z_min", a.z_min}, {"z_max", a.z_max}, {"seed", a.seed}};
}

void from_json(const Json& j, AnchorSpec& a) {
  check_keys(j, {"n_rot", "n_vx", "n_vy", "n_z", "v_min", "v_max", "z_min", "z_max", "seed"}, "anchors");
  get(j, "n_rot", a.n_rot);
  get(j, "n_vx", a.n_vx);
  get(j, "n_vy", a.n_vy);
  get(j, "n_z", a.n_z);
  get(j, "v_min", a.v_min);
  get(j, "v_max", a.v_max);
  get(j, "z_min", a.z_min);
  get(j, "z_max", a.z_max);
  get(j, "seed", a.seed);
}

Json to_json(const NetworkConfig& n) {
  return {{"input_dim", n.input_dim},   {"feature_dim", n.feature_dim}, {"encoder_layers", n.encoder_layers},
          {"head_hidden", n.head_hidden}, {"classifier", n.classifier},  {"zero_init_heads", n.zero_init_heads},
          {"seed", n.seed}};
}

void from_json(const Json& j, NetworkConfig& n) {
  check_keys(j, {"input_dim", "feature_dim", "encoder_layers", "head_hidden", "classifier", "zero_init_heads", "seed"},
             "network");
  get(j, "input_dim", n.input_dim);
  get(j, "feature_dim", n.feature_dim);
  get(j, "encoder_layers", n.encoder_layers);
  get(j, "head_hidden", n.head_hidden);
  get(j, "classifier", n.classifier);
  get(j, "zero_init_heads", n.zero_init_heads);
  get(j, "seed", n.seed);
}

Json to_json(const ScoreAssignmentConfig& s) { return {{"theta1", s.theta1}, {"theta2", s.theta2}, {"k", s.k}}; }

void from_json(const Json& j, ScoreAssignmentConfig& s) {
  check_keys(j, {"theta1", "theta2", "k"}, "score assignment");
  get(j, "theta1", s.theta1);
  get(j, "theta2", s.theta2);
  get(j, "k", s.k);
}

Json to_json(const ObjectiveConfig& o) {
  return {{"labels",
           {{"rotation", to_json(o.labels.rotation)},
            {"vx", to_json(o.labels.vx)},
            {"vy", to_json(o.labels.vy)},
            {"z", to_json(o.labels.z)}}},
          {"k_rotation", o.k_rotation},
          {"k_z", o.k_z},
          {"k_vxvy", o.k_vxvy},
          {"use_classification", o.use_classification},
          {"use_ctc", o.use_ctc},
          {"ctc_weight", o.ctc_weight}};
}

void from_json(const Json& j, ObjectiveConfig& o) {
  check_keys(j, {"labels", "k_rotation", "k_z", "k_vxvy", "use_classification", "use_ctc", "ctc_weight"},
             "objective");
  if (j.contains("labels")) {
    const Json& l = j.at("labels");
    check_keys(l, {"rotation", "vx", "vy", "z"}, "objective.labels");
    if (l.contains("rotation")) from_json(l.at("rotation"), o.labels.rotation);
    if (l.contains("vx")) from_json(l.at("vx"), o.labels.vx);
    if (l.contains("vy")) from_json(l.at("vy"), o.labels.vy);
    if (l.contains("z")) from_json(l.at("z"), o.labels.z);
  }
  get(j, "k_rotation", o.k_rotation);
  get(j, "k_z", o.k_z);
  get(j, "k_vxvy", o.k_vxvy);
  get(j, "use_classification", o.use_classification);
  get(j, "use_ctc", o.use_ctc);
  get(j, "ctc_weight", o.ctc_weight);
}

Json to_json(const SelfTrainConfig& s) {
  return {{"tau_start", s.tau_start},       {"tau_end", s.tau_end},
          {"rounds", s.rounds},             {"pretrain_epochs", s.pretrain_epochs},
          {"teacher_epochs", s.teacher_epochs}, {"student_epochs", s.student_epochs},
          {"teacher_lr", s.teacher_lr},     {"student_lr", s.student_lr},
          {"batch_size", s.batch_size},     {"reannotate", s.reannotate},
          {"cosine_lr", s.cosine_lr},
          {"seed", s.seed}};
}

void from_json(const Json& j, SelfTrainConfig& s) {
  check_keys(j,
             {"tau_start", "tau_end", "rounds", "pretrain_epochs", "teacher_epochs", "student_epochs", "teacher_lr",
              "student_lr", "batch_size", "reannotate", "cosine_lr", "seed"},
             "selftrain");
  get(j, "tau_start", s.tau_start);
  get(j, "tau_end", s.tau_end);
  get(j, "rounds", s.rounds);
  get(j, "pretrain_epochs", s.pretrain_epochs);
  get(j, "teacher_epochs", s.teacher_epochs);
  get(j, "student_epochs", s.student_epochs);
  get(j, "teacher_lr", s.teacher_lr);
  get(j, "student_lr", s.student_lr);
  get(j, "batch_size", s.batch_size);
  get(j, "reannotate", s.reannotate);
  get(j, "cosine_lr", s.cosine_lr);
  get(j, "seed", s.seed);
}

Json to_json(const CameraIntrinsics& c) { return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}}; }

void from_json(const Json& j, CameraIntrinsics& c) {
  check_keys(j, {"fx", "fy", "cx", "cy"}, "camera");
  get(j, "fx", c.fx);
  get(j, "fy", c.fy);
  get(j, "cx", c.cx);
  get(j, "cy", c.cy);
}

Json to_json(const DomainConfig& d) {
  return {{"offset", d.offset},
          {"noise", d.noise},
          {"dropout", d.dropout},
          {"depth_noise", d.depth_noise},
          {"offset_spread", d.offset_spread},
          {"seed", d.seed}};
}

void from_json(const Json& j, DomainConfig& d) {
  check_keys(j, {"offset", "noise", "dropout", "depth_noise", "offset_spread", "seed"}, "domain");
  get(j, "depth_noise", d.depth_noise);
  get(j, "offset_spread", d.offset_spread);
  get(j, "offset", d.offset);
  get(j, "noise", d.noise);
  get(j, "dropout", d.dropout);
  get(j, "seed", d.seed);
}

Json to_json(const PoseRange& r) {
  return {{"v_min", r.v_min}, {"v_max", r.v_max}, {"z_min", r.z_min}, {"z_max", r.z_max}};
}

void from_json(const Json& j, PoseRange& r) {
  check_keys(j, {"v_min", "v_max", "z_min", "z_max"}, "pose range");
  get(j, "v_min", r.v_min);
  get(j, "v_max", r.v_max);
  get(j, "z_min", r.z_min);
  get(j, "z_max", r.z_max);
}

Json to_json(const ObjectModel& m) {
  Json pts = Json::array();
  for (const Vec3& p : m.points) pts.push_back({p.x(), p.y(), p.z()});
  Json sym = Json::array();
  for (const Mat3& s : m.symmetries) sym.push_back(row_major(s));
  return {{"diameter", m.diameter}, {"symmetries", sym}, {"points", pts}};
}

ObjectModel object_model_from_json(const Json& j) {
  ObjectModel m;
  try {
    m.diameter = j.at("diameter").get<double>();
    m.symmetries.clear();
    for (const auto& s : j.at("symmetries")) {
      const Mat3 r = from_row_major(s);
      if (!is_rotation(r, 1e-9)) throw IoError("object model: symmetry is not a rotation");
      m.symmetries.push_back(r);
    }
    for (const auto& p : j.at("points")) {
      const auto v = p.get<std::vector<double>>();
      if (v.size() != 3) throw IoError("object model: point must have 3 entries");
      m.points.emplace_back(v[0], v[1], v[2]);
    }
  } catch (const Json::exception& e) {
    throw IoError(std::string("object model: ") + e.what());
  }
  if (m.points.empty() || m.symmetries.empty()) throw IoError("object model: empty point or symmetry list");
  return m;
}

namespace {

Json dataset_header(const Dataset& ds, Domain d) {
  Json objects = Json::array();
  for (const auto& o : ds.objects) {
    Json j = to_json(o.model);
    j["id"] = o.id;
    j["kind"] = to_string(o.kind);
    j["seed"] = o.seed;
    objects.push_back(j);
  }
  return {{"format", "mast-dataset"},
          {"version", kDatasetVersion},
          {"domain", to_string(d)},
          {"seed", ds.seed},
          {"embedding_seed", ds.embedding_seed},
          {"camera", to_json(ds.camera)},
          {"range", to_json(ds.range)},
          {"source_cfg", to_json(ds.source_cfg)},
          {"target_cfg", to_json(ds.target_cfg)},
          {"objects", objects}};
}

void write_split(const Dataset& ds, Domain d, const std::filesystem::path& path) {
  std::string out = dataset_header(ds, d).dump() + "\n";
  for (const Sample* s : ds.split(d)) {
    const Box2D& b = s->box;
    Json r = {{"id", s->id},
              {"domain", to_string(s->domain)},
              {"object_id", s->object_id},
              {"observation", s->observation},
              {"box", {b.x_min, b.y_min, b.x_max, b.y_max}},
              {"gt_pose", pose_json(s->gt_pose())},
              {"eval_only", s->eval_only()}};
    out += r.dump() + "\n";
  }
  write_text(path, out);
}

void read_split(Dataset& ds, const std::filesystem::path& path, Domain expected, bool first) {
  const auto lines = read_lines(path);
  const Json h = parse_line(lines[0], path, 1);
  try {
    if (h.at("format") != "mast-dataset") throw IoError(path.string() + ": not a dataset file");
    if (h.at("version").get<int>() != kDatasetVersion) throw IoError(path.string() + ": unsupported version");
    if (parse_domain(h.at("domain").get<std::string>()) != expected) {
      throw IoError(path.string() + ": unexpected domain " + h.at("domain").get<std::string>());
    }
    if (first) {
      ds.seed = h.at("seed").get<std::uint64_t>();
      ds.embedding_seed = h.at("embedding_seed").get<std::uint64_t>();
      from_json(h.at("camera"), ds.camera);
      from_json(h.at("range"), ds.range);
      from_json(h.at("source_cfg"), ds.source_cfg);
      from_json(h.at("target_cfg"), ds.target_cfg);
      for (const auto& o : h.at("objects")) {
        ds.objects.push_back({o.at("id").get<std::string>(), parse_object_kind(o.at("kind").get<std::string>()),
                              o.at("seed").get<std::uint64_t>(), object_model_from_json(o)});
      }
    } else if (h.at("seed").get<std::uint64_t>() != ds.seed) {
      throw IoError(path.string() + ": source and target files come from different runs");
    }
    for (std::size_t n = 1; n < lines.size(); ++n) {
      const Json r = parse_line(lines[n], path, n + 1);
      const auto box = r.at("box").get<std::vector<double>>();
      if (box.size() != 4) throw IoError(path.string() + ": box must have 4 entries");
      ds.samples.emplace_back(r.at("id").get<std::string>(), parse_domain(r.at("domain").get<std::string>()),
                              r.at("object_id").get<std::string>(), r.at("observation").get<std::vector<double>>(),
                              Box2D{box[0], box[1], box[2], box[3]}, pose_from_json(r.at("gt_pose")),
                              r.at("eval_only").get<bool>());
    }
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::filesystem::path& source_path,
                  const std::filesystem::path& target_path) {
  write_split(ds, Domain::Source, source_path);
  write_split(ds, Domain::Target, target_path);
}

Dataset load_dataset(const std::filesystem::path& source_path, const std::filesystem::path& target_path) {
  Dataset ds;
  read_split(ds, source_path, Domain::Source, true);
  read_split(ds, target_path, Domain::Target, false);
  if (!ds.samples.empty()) {
    const std::size_t dim = ds.samples.front().observation.size();
    for (const auto& s : ds.samples) {
      if (s.observation.size() != dim) throw IoError("dataset: observation dimension varies across samples");
      ds.object(s.object_id);
    }
  }
  return ds;
}

void save_scalar_dataset(const ScalarDataset& ds, const std::filesystem::path& path) {
  const Json h = {{"format", "mast-scalar-dataset"},
                  {"version", kDatasetVersion},
                  {"seed", ds.seed},
                  {"embedding_seed", ds.shift.embedding_seed},
                  {"source_cfg", to_json(ds.shift.source)},
                  {"target_cfg", to_json(ds.shift.target)}};
  std::string out = h.dump() + "\n";
  for (const auto& s : ds.samples) {
    const Json r = {{"id", s.id},
                    {"domain", to_string(s.domain)},
                    {"observation", s.observation},
                    {"target", s.target},
                    {"eval_only", s.eval_only}};
    out += r.dump() + "\n";
  }
  write_text(path, out);
}

ScalarDataset load_scalar_dataset(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  ScalarDataset ds;
  try {
    const Json h = parse_line(lines[0], path, 1);
    if (h.at("format") != "mast-scalar-dataset") throw IoError(path.string() + ": not a scalar dataset file");
    if (h.at("version").get<int>() != kDatasetVersion) throw IoError(path.string() + ": unsupported version");
    ds.seed = h.at("seed").get<std::uint64_t>();
    ds.shift.embedding_seed = h.at("embedding_seed").get<std::uint64_t>();
    from_json(h.at("source_cfg"), ds.shift.source);
    from_json(h.at("target_cfg"), ds.shift.target);
    for (std::size_t n = 1; n < lines.size(); ++n) {
      const Json r = parse_line(lines[n], path, n + 1);
      ds.samples.push_back({r.at("id").get<std::string>(), parse_domain(r.at("domain").get<std::string>()),
                            r.at("observation").get<std::vector<double>>(), r.at("target").get<double>(),
                            r.at("eval_only").get<bool>()});
    }
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
  return ds;
}

namespace {

std::uint64_t fnv1a(const char* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 0x100000001b3ULL;
  }
  return h;
}

struct NetBlock {
  std::string id;
  long adam_steps = 0;
  double adam_lr = 0.0;
  std::vector<const nn::Parameter*> params;
};

Json block_json(const NetBlock& b) {
  Json ps = Json::array();
  for (const auto* p : b.params) ps.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  return {{"object_id", b.id}, {"adam_steps", b.adam_steps}, {"adam_lr", b.adam_lr}, {"parameters", ps}};
}

void append_doubles(std::string& out, std::span<const double> v) {
  out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
}

void write_checkpoint(const std::filesystem::path& path, const Json& header, const std::vector<NetBlock>& blocks) {
  const std::string h = header.dump();
  std::string payload;
  const std::uint64_t hlen = h.size();
  payload.append(reinterpret_cast<const char*>(&hlen), sizeof hlen);
  payload += h;
  for (const auto& b : blocks) {
    for (const auto* p : b.params) {
      append_doubles(payload, p->value.values());
      append_doubles(payload, p->m.values());
      append_doubles(payload, p->v.values());
    }
  }
  std::string out(kMagic, sizeof kMagic);
  out.append(reinterpret_cast<const char*>(&kCheckpointVersion), sizeof kCheckpointVersion);
  out += payload;
  const std::uint64_t sum = fnv1a(payload.data(), payload.size());
  out.append(reinterpret_cast<const char*>(&sum), sizeof sum);
  write_text(path, out);
}

// Validated view over a checkpoint's bytes.
struct CheckpointReader {
  std::string bytes;
  Json header;
  std::size_t pos = 0;
  std::string name;

  explicit CheckpointReader(const std::filesystem::path& path) : name(path.string()) {
    bytes = read_text(path);
    const std::size_t fixed = sizeof kMagic + sizeof(std::uint32_t) + 2 * sizeof(std::uint64_t);
    if (bytes.size() < fixed || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
      throw IoError(name + ": not a checkpoint file");
    }
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
    if (version != kCheckpointVersion) throw IoError(name + ": unsupported checkpoint version");
    const std::size_t begin = sizeof kMagic + sizeof version;
    const std::size_t end = bytes.size() - sizeof(std::uint64_t);
    std::uint64_t sum = 0;
    std::memcpy(&sum, bytes.data() + end, sizeof sum);
    if (fnv1a(bytes.data() + begin, end - begin) != sum) throw IoError(name + ": checksum mismatch (corrupt file)");
    std::uint64_t hlen = 0;
    std::memcpy(&hlen, bytes.data() + begin, sizeof hlen);
    pos = begin + sizeof hlen;
    if (hlen > end - pos) throw IoError(name + ": truncated header");
    try {
      header = Json::parse(bytes.substr(pos, hlen));
    } catch (const Json::exception& e) {
      throw IoError(name + ": malformed header: " + e.what());
    }
    pos += hlen;
  }

  void read(std::span<double> dst) {
    const std::size_t n = dst.size() * sizeof(double);
    if (pos + n > bytes.size() - sizeof(std::uint64_t)) throw IoError(name + ": truncated parameter data");
    std::memcpy(dst.data(), bytes.data() + pos, n);
    pos += n;
  }

  void load_block(const Json& j, std::vector<nn::Parameter*> params, nn::Adam& adam) {
    const Json& ps = j.at("parameters");
    if (ps.size() != params.size()) throw IncompatibleCheckpoint(name + ": parameter count differs from the network");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto* p = params[i];
      if (ps[i].at("name").get<std::string>() != p->name ||
          ps[i].at("shape").get<std::vector<std::size_t>>() != p->value.shape()) {
        throw IncompatibleCheckpoint(name + ": parameter " + p->name + " does not match the network layout");
      }
      read(p->value.values());
      read(p->m.values());
      read(p->v.values());
    }
    adam = nn::Adam({.lr = j.at("adam_lr").get<double>()});
    adam.set_steps(j.at("adam_steps").get<long>());
  }

  void finish() const {
    if (pos != bytes.size() - sizeof(std::uint64_t)) throw IoError(name + ": trailing data");
  }
};

}  // namespace

void save_checkpoint(const PoseEstimator& est, const std::filesystem::path& path, const Json& meta) {
  std::vector<NetBlock> blocks;
  Json members = Json::array();
  for (const auto& m : est.members) {
    blocks.push_back({m.object_id, m.adam.steps(), m.adam.config().lr, m.net.parameters()});
    members.push_back(block_json(blocks.back()));
  }
  const Json header = {{"kind", "pose"},
                       {"anchors", to_json(est.anchor_spec)},
                       {"network", to_json(est.net)},
                       {"objective", to_json(est.objective)},
                       {"camera", to_json(est.camera)},
                       {"members", members},
                       {"meta", meta}};
  write_checkpoint(path, header, blocks);
}

PoseEstimator load_checkpoint(const std::filesystem::path& path, Json* meta) {
  CheckpointReader r(path);
  try {
    if (r.header.at("kind") != "pose") throw IncompatibleCheckpoint(r.name + ": not a pose checkpoint");
    AnchorSpec anchors;
    NetworkConfig net;
    ObjectiveConfig objective;
    CameraIntrinsics cam;
    from_json(r.header.at("anchors"), anchors);
    from_json(r.header.at("network"), net);
    from_json(r.header.at("objective"), objective);
    from_json(r.header.at("camera"), cam);
    std::vector<std::string> ids;
    for (const auto& m : r.header.at("members")) ids.push_back(m.at("object_id").get<std::string>());
    PoseEstimator est = PoseEstimator::create(anchors, net, objective, cam, ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      r.load_block(r.header.at("members")[i], est.members[i].net.parameters(), est.members[i].adam);
    }
    r.finish();
    if (meta != nullptr) *meta = r.header.value("meta", Json::object());
    return est;
  } catch (const Json::exception& e) {
    throw IoError(r.name + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(r.name + ": invalid stored configuration: " + e.what());
  }
}

void save_scalar_checkpoint(const ScalarEstimator& est, int n_bins, bool direct, const std::filesystem::path& path,
                            const Json& meta) {
  const NetBlock block{"scalar", est.adam.steps(), est.adam.config().lr, est.network.parameters()};
  const Json header = {{"kind", "scalar"},
                       {"bins", n_bins},
                       {"direct", direct},
                       {"use_ctc", est.objective.use_ctc},
                       {"ctc_weight", est.objective.ctc_weight},
                       {"network", to_json(est.net)},
                       {"members", Json::array({block_json(block)})},
                       {"meta", meta}};
  write_checkpoint(path, header, {block});
}

ScalarEstimator load_scalar_checkpoint(const std::filesystem::path& path, Json* meta) {
  CheckpointReader r(path);
  try {
    if (r.header.at("kind") != "scalar") throw IncompatibleCheckpoint(r.name + ": not a scalar checkpoint");
    NetworkConfig net;
    from_json(r.header.at("network"), net);
    ScalarEstimator est = ScalarEstimator::create(r.header.at("bins").get<int>(), r.header.at("direct").get<bool>(),
                                                  r.header.at("use_ctc").get<bool>(), net);
    est.objective.ctc_weight = r.header.at("ctc_weight").get<double>();
    r.load_block(r.header.at("members")[0], est.network.parameters(), est.adam);
    r.finish();
    if (meta != nullptr) *meta = r.header.value("meta", Json::object());
    return est;
  } catch (const Json::exception& e) {
    throw IoError(r.name + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(r.name + ": invalid stored configuration: " + e.what());
  }
}

void check_compatible(const PoseEstimator& est, const AnchorSpec& anchors, const NetworkConfig& net) {
  const Json a = to_json(est.anchor_spec), b = to_json(anchors);
  if (a != b) throw IncompatibleCheckpoint("checkpoint anchors " + a.dump() + " differ from the configured " + b.dump());
  Json n1 = to_json(est.net), n2 = to_json(net);
  n1.erase("seed");
  n2.erase("seed");
  if (n1 != n2) {
    throw IncompatibleCheckpoint("checkpoint network " + n1.dump() + " differs from the configured " + n2.dump());
  }
}

void write_pseudo_labels(const std::filesystem::path& path, std::span<const PseudoLabel> labels, int round) {
  std::string s = "sample_id,object_id,round,confidence,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz\n";
  for (const auto& l : labels) {
    s += fmt::format("{},{},{},{}", l.sample_id, l.object_id, round, l.confidence);
    for (double v : row_major(l.pose.rotation)) s += fmt::format(",{}", v);
    s += fmt::format(",{},{},{}\n", l.pose.translation.x(), l.pose.translation.y(), l.pose.translation.z());
  }
  write_text(path, s);
}

}  // namespace mast
