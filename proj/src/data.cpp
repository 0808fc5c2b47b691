#include "mvvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <sstream>

#include "mvvae/errors.hpp"
#include "mvvae/rng.hpp"

namespace mvvae::data {

namespace fs = std::filesystem;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  std::fwrite(b, 1, 4, f);
}

std::uint32_t read_u32(std::FILE* f, const std::string& path) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw DataError("clip: truncated file: " + path);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

const char* view_name(View v) {
  switch (v) {
    case View::PLAX: return "PLAX";
    case View::A4C: return "A4C";
    case View::PSAX_P: return "PSAX-P";
    case View::PSAX_S: return "PSAX-S";
    case View::PSAX_A: return "PSAX-A";
  }
  return "?";
}

View view_from_name(const std::string& name) {
  for (View v : all_views())
    if (name == view_name(v)) return v;
  throw DataError("unknown view name: " + name);
}

std::vector<View> all_views() {
  return {View::PLAX, View::A4C, View::PSAX_P, View::PSAX_S, View::PSAX_A};
}

const char* class_name(PhClass c) {
  switch (c) {
    case PhClass::None: return "none";
    case PhClass::Mild: return "mild";
    case PhClass::ModerateSevere: return "moderate-severe";
  }
  return "?";
}

PhClass class_from_name(const std::string& name) {
  if (name == "none") return PhClass::None;
  if (name == "mild") return PhClass::Mild;
  if (name == "moderate-severe") return PhClass::ModerateSevere;
  throw DataError("unknown class label: " + name);
}

void ViewClip::validate() const {
  if (frames.shape.size() != 3 || frames.shape[0] < 1)
    throw DataError("clip: frames must be [T, H, W] with T >= 1");
  if (fps <= 0.0) throw DataError("clip: fps must be positive");
  for (double v : frames.v)
    if (!(v >= 0.0 && v <= 1.0))
      throw DataError("clip: pixel values must lie in [0, 1]");
}

void DatasetManifest::recount() {
  class_counts = {0, 0, 0};
  for (const auto& e : entries)
    if (e.label) ++class_counts[static_cast<std::size_t>(*e.label)];
}

// ---------------------------------------------------------------------------
// clip files
// ---------------------------------------------------------------------------

void save_clip(const std::string& path, const ViewClip& clip) {
  clip.validate();
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw DataError("clip: cannot open for writing: " + path);
  const int t = clip.frames.shape[0], h = clip.frames.shape[1], w = clip.frames.shape[2];
  const std::uint32_t fps_num = static_cast<std::uint32_t>(std::lround(clip.fps * 1000.0));
  write_u32(f.get(), kClipMagic);
  write_u32(f.get(), kClipVersion);
  write_u32(f.get(), static_cast<std::uint32_t>(t));
  write_u32(f.get(), static_cast<std::uint32_t>(h));
  write_u32(f.get(), static_cast<std::uint32_t>(w));
  write_u32(f.get(), fps_num);
  write_u32(f.get(), 1000);
  write_u32(f.get(), 0);
  std::vector<float> buf(clip.frames.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<float>(clip.frames[i]);
  std::fwrite(buf.data(), sizeof(float), buf.size(), f.get());
  if (std::ferror(f.get())) throw DataError("clip: write failed: " + path);
}

ClipHeader read_clip_header(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("clip: missing file: " + path);
  if (read_u32(f.get(), path) != kClipMagic)
    throw DataError("clip: bad magic: " + path);
  const std::uint32_t version = read_u32(f.get(), path);
  if (version != kClipVersion)
    throw DataError("clip: unsupported version " + std::to_string(version) +
                    ": " + path);
  ClipHeader hd;
  hd.t = static_cast<int>(read_u32(f.get(), path));
  hd.h = static_cast<int>(read_u32(f.get(), path));
  hd.w = static_cast<int>(read_u32(f.get(), path));
  const std::uint32_t num = read_u32(f.get(), path);
  const std::uint32_t den = read_u32(f.get(), path);
  read_u32(f.get(), path);  // reserved
  if (hd.t < 1 || hd.h < 1 || hd.w < 1 || den == 0)
    throw DataError("clip: malformed header: " + path);
  hd.fps = static_cast<double>(num) / den;
  return hd;
}

ViewClip load_clip(const std::string& path, View view) {
  const ClipHeader hd = read_clip_header(path);
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw DataError("clip: missing file: " + path);
  std::fseek(f.get(), 32, SEEK_SET);
  ViewClip clip;
  clip.view = view;
  clip.fps = hd.fps;
  clip.frames = Tensor({hd.t, hd.h, hd.w});
  std::vector<float> buf(clip.frames.size());
  if (std::fread(buf.data(), sizeof(float), buf.size(), f.get()) != buf.size())
    throw DataError("clip: truncated pixel data: " + path);
  for (std::size_t i = 0; i < buf.size(); ++i)
    clip.frames[i] = static_cast<double>(buf[i]);
  clip.validate();
  return clip;
}

// ---------------------------------------------------------------------------
// manifest files
// ---------------------------------------------------------------------------

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  const auto parent = fs::path(path).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  FilePtr f(std::fopen(path.c_str(), "w"));
  if (!f) throw DataError("manifest: cannot open for writing: " + path);
  std::fprintf(f.get(), "mvvae-manifest %d\n", manifest.schema_version);
  std::fprintf(f.get(), "frame_size %d %d\n", manifest.frame_h, manifest.frame_w);
  std::fprintf(f.get(), "class_counts %d %d %d\n", manifest.class_counts[0],
               manifest.class_counts[1], manifest.class_counts[2]);
  for (const auto& e : manifest.entries) {
    std::fprintf(f.get(), "study %s %s %s", e.study_id.c_str(),
                 e.patient_id.c_str(), e.label ? class_name(*e.label) : "-");
    if (e.factor)
      std::fprintf(f.get(), " %.17g", *e.factor);
    else
      std::fprintf(f.get(), " -");
    for (const auto& [view, rel] : e.clip_paths)
      std::fprintf(f.get(), " %s=%s", view_name(view), rel.c_str());
    std::fprintf(f.get(), "\n");
  }
  if (std::ferror(f.get())) throw DataError("manifest: write failed: " + path);
}

DatasetManifest load_manifest(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "r"));
  if (!f) throw DataError("manifest: missing file: " + path);
  std::string content;
  {
    char buf[4096];
    std::size_t got;
    while ((got = std::fread(buf, 1, sizeof buf, f.get())) > 0)
      content.append(buf, got);
  }

  DatasetManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::istringstream in(content);
  std::string line;
  std::array<int, kNumClasses> declared{};
  bool header_seen = false, counts_seen = false, size_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "mvvae-manifest") {
      int version = -1;
      ls >> version;
      if (version != kManifestVersion)
        throw DataError("manifest: unsupported schema version " +
                        std::to_string(version) + ": " + path);
      header_seen = true;
    } else if (tag == "frame_size") {
      ls >> m.frame_h >> m.frame_w;
      if (m.frame_h < 1 || m.frame_w < 1)
        throw DataError("manifest: bad frame_size: " + path);
      size_seen = true;
    } else if (tag == "class_counts") {
      ls >> declared[0] >> declared[1] >> declared[2];
      counts_seen = true;
    } else if (tag == "study") {
      StudyEntry e;
      std::string label, factor;
      ls >> e.study_id >> e.patient_id >> label >> factor;
      if (e.study_id.empty() || e.patient_id.empty() || factor.empty())
        throw DataError("manifest: malformed study line: " + line);
      if (label != "-") e.label = class_from_name(label);
      if (factor != "-") e.factor = std::stod(factor);
      std::string pair;
      while (ls >> pair) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos)
          throw DataError("manifest: malformed clip field: " + pair);
        const View v = view_from_name(pair.substr(0, eq));
        if (e.clip_paths.count(v))
          throw DataError("manifest: duplicate view " + pair.substr(0, eq) +
                          " in study " + e.study_id);
        e.clip_paths[v] = pair.substr(eq + 1);
      }
      m.entries.push_back(std::move(e));
    } else {
      throw DataError("manifest: unknown directive '" + tag + "': " + path);
    }
  }
  if (!header_seen) throw DataError("manifest: missing header line: " + path);
  if (!size_seen) throw DataError("manifest: missing frame_size: " + path);

  m.recount();
  if (counts_seen && m.class_counts != declared)
    throw DataError("manifest: class_counts disagree with entries: " + path);

  // Every referenced file must exist and match the declared shape.
  for (const auto& e : m.entries)
    for (const auto& [view, rel] : e.clip_paths) {
      const std::string full = (fs::path(m.base_dir) / rel).string();
      const ClipHeader hd = read_clip_header(full);
      if (hd.h != m.frame_h || hd.w != m.frame_w)
        throw DataError("manifest: clip shape " + std::to_string(hd.h) + "x" +
                        std::to_string(hd.w) + " does not match declared " +
                        std::to_string(m.frame_h) + "x" +
                        std::to_string(m.frame_w) + ": " + full);
    }
  return m;
}

ViewClip load_study_clip(const DatasetManifest& manifest,
                         const StudyEntry& entry, View view) {
  const auto it = entry.clip_paths.find(view);
  if (it == entry.clip_paths.end())
    throw DataError("study " + entry.study_id + " has no clip for view " +
                    view_name(view));
  return load_clip((fs::path(manifest.base_dir) / it->second).string(), view);
}

// ---------------------------------------------------------------------------
// synthetic benchmark
// ---------------------------------------------------------------------------

void GeneratorConfig::validate() const {
  if (patients < 1) throw ConfigError("generator: patients must be >= 1");
  if (frames_per_clip < 1) throw ConfigError("generator: frames_per_clip must be >= 1");
  if (frame_hw < 16) throw ConfigError("generator: frame size too small");
  double sum = 0.0;
  for (double p : class_proportions) {
    if (p < 0.0) throw ConfigError("generator: negative class proportion");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw ConfigError("generator: class proportions must sum to 1");
  if (unlabeled_fraction < 0.0 || unlabeled_fraction >= 1.0)
    throw ConfigError("generator: unlabeled_fraction must be in [0, 1)");
  if (heldout_fraction < 0.0 || heldout_fraction >= 1.0)
    throw ConfigError("generator: heldout_fraction must be in [0, 1)");
  if (speckle < 0.0) throw ConfigError("generator: negative speckle");
}

std::pair<double, double> factor_range(PhClass c) {
  switch (c) {
    case PhClass::None: return {0.0, 0.2};
    case PhClass::Mild: return {0.35, 0.6};
    case PhClass::ModerateSevere: return {0.7, 1.0};
  }
  return {0.0, 0.0};
}

PhClass class_of_factor(double f) {
  if (f < 0.2) return PhClass::None;
  if (f < 0.6) return PhClass::Mild;
  return PhClass::ModerateSevere;
}

namespace {

std::array<int, 3> largest_remainder_counts(int n,
                                            const std::array<double, 3>& prop) {
  std::array<int, 3> counts{};
  std::array<double, 3> frac{};
  int assigned = 0;
  for (int c = 0; c < 3; ++c) {
    const double exact = n * prop[static_cast<std::size_t>(c)];
    counts[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(exact));
    frac[static_cast<std::size_t>(c)] = exact - counts[static_cast<std::size_t>(c)];
    assigned += counts[static_cast<std::size_t>(c)];
  }
  while (assigned < n) {
    int best = 0;
    for (int c = 1; c < 3; ++c)
      if (frac[static_cast<std::size_t>(c)] > frac[static_cast<std::size_t>(best)])
        best = c;
    ++counts[static_cast<std::size_t>(best)];
    frac[static_cast<std::size_t>(best)] = -1.0;
    ++assigned;
  }
  return counts;
}

struct PatientScene {
  double f = 0.0;      // flattening factor
  double phase = 0.0;  // cardiac phase offset
  double scale = 1.0;
  double cx = 0.0, cy = 0.0;
  double xmid = 0.0;  // septum horizontal offset
  double bright = 1.0;
};

// Fixed per-view projective transforms, septum visibility windows and
// brightness factors. Each view observes the same scene under a distinct
// geometry and sees only part of the dividing contour, so the views carry
// complementary information.
struct ViewGeometry {
  double theta, sx, sy, gx, gy, tx, ty;
  double vis_lo, vis_hi;
  double bright;
};

const ViewGeometry kViewGeom[kNumViews] = {
    {0.00, 1.00, 1.00, 0.00, 0.00, 0.00, 0.00, -0.70, 0.10, 1.00},
    {0.66, 0.95, 1.08, 0.12, -0.06, 0.05, -0.03, -0.10, 0.70, 0.93},
    {-0.52, 1.10, 0.92, -0.10, 0.10, -0.04, 0.04, -0.40, 0.35, 0.97},
    {0.26, 0.90, 1.00, 0.06, 0.12, 0.02, 0.05, -0.25, 0.55, 0.90},
    {-0.21, 1.05, 1.05, -0.05, -0.10, -0.05, 0.00, -0.55, 0.25, 0.88},
};

double smoothstep(double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  return x * x * (3.0 - 2.0 * x);
}

Tensor render_frame(const PatientScene& ps, int view_idx, int frame_idx,
                    int frames_per_clip, int hw, double speckle, Rng& rng) {
  const ViewGeometry& g = kViewGeom[view_idx];
  const double ca = std::cos(g.theta), sa = std::sin(g.theta);
  const double cycle = 2.0 * kPi * frame_idx / frames_per_clip + ps.phase;
  const double pulse = 1.0 + 0.06 * std::sin(cycle);
  const double bow =
      0.22 * ps.scale * (2.0 * ps.f - 1.0) * (1.0 + 0.10 * std::sin(cycle));
  const double vs = 0.62 * ps.scale;
  const double orx = 0.80 * ps.scale, ory = 0.68 * ps.scale;
  const double lvx = ps.cx + 0.40 * ps.scale;
  const double lrx = 0.30 * ps.scale * pulse, lry = 0.42 * ps.scale * pulse;

  Tensor frame({hw, hw});
  for (int y = 0; y < hw; ++y) {
    for (int x = 0; x < hw; ++x) {
      const double a = 2.0 * (x + 0.5) / hw - 1.0;
      const double b = 2.0 * (y + 0.5) / hw - 1.0;

      // Ultrasound-like sector from an apex above the frame.
      const double ang = std::atan2(a, b + 1.15);
      const double rad = std::sqrt(a * a + (b + 1.15) * (b + 1.15));
      const double n1 = rng.normal();
      const double n2 = rng.normal();
      if (std::abs(ang) > 0.85 || rad > 2.35) {
        frame[static_cast<std::size_t>(y) * hw + x] =
            std::clamp(0.015 + 0.01 * std::abs(n2), 0.0, 1.0);
        continue;
      }

      // Projective map into scene coordinates.
      const double denom = 1.0 + g.gx * a + g.gy * b;
      const double ap = g.sx * a, bp = g.sy * b;
      const double u = (ca * ap - sa * bp) / denom + g.tx;
      const double v = (sa * ap + ca * bp) / denom + g.ty;

      const double du = u - ps.cx, dv = v - ps.cy;
      const double e = std::sqrt(du * du / (orx * orx) + dv * dv / (ory * ory));
      double intensity = 0.02;
      if (e < 1.1) intensity += 0.10;
      const double wall = (e - 1.0) / 0.06;
      intensity += 0.70 * std::exp(-wall * wall);

      // Pulsating left-ventricle ring.
      const double lu = u - lvx, lv = v - ps.cy;
      const double el = std::sqrt(lu * lu / (lrx * lrx) + lv * lv / (lry * lry));
      const double lwall = (el - 1.0) / 0.08;
      intensity += 0.35 * std::exp(-lwall * lwall);

      // Septal contour: bright band at x = s(v), faded at its ends and
      // windowed by the view's visibility range.
      if (e < 1.05 && std::abs(dv) < vs) {
        const double rel = dv / vs;
        const double sx_ = ps.cx + ps.xmid + bow * (1.0 - rel * rel);
        const double band = (u - sx_) / 0.05;
        const double ends = std::exp(-std::pow(rel, 8.0));
        const double vis = smoothstep((dv - g.vis_lo) / 0.06) *
                           smoothstep((g.vis_hi - dv) / 0.06);
        intensity += 0.95 * std::exp(-band * band) * ends * vis;
      }

      intensity *= ps.bright * g.bright;
      intensity *= 1.0 + speckle * n1;
      intensity += 0.02 * std::abs(n2);
      frame[static_cast<std::size_t>(y) * hw + x] = std::clamp(intensity, 0.0, 1.0);
    }
  }
  return frame;
}

}  // namespace

SyntheticDataset generate_synthetic(const GeneratorConfig& cfg,
                                    std::uint64_t seed,
                                    const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "clips", ec);
  if (ec) throw DataError("generator: cannot create output dir: " + out_dir);
  {
    const std::string probe = (fs::path(out_dir) / ".write_probe").string();
    FilePtr f(std::fopen(probe.c_str(), "w"));
    if (!f) throw DataError("generator: output dir not writable: " + out_dir);
    f.reset();
    fs::remove(probe);
  }

  const auto counts = largest_remainder_counts(cfg.patients, cfg.class_proportions);
  std::vector<PhClass> assignment;
  for (int c = 0; c < 3; ++c)
    assignment.insert(assignment.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(c)]),
                      static_cast<PhClass>(c));
  {
    Rng arng(derive_seed(seed, 0xA551));
    arng.shuffle(assignment);
  }

  std::vector<PatientScene> scenes(static_cast<std::size_t>(cfg.patients));
  for (int i = 0; i < cfg.patients; ++i) {
    Rng prng(derive_seed(seed, 0x9A71E47, static_cast<std::uint64_t>(i)));
    const auto [lo, hi] = factor_range(assignment[static_cast<std::size_t>(i)]);
    auto& ps = scenes[static_cast<std::size_t>(i)];
    ps.f = prng.uniform(lo, hi);
    ps.phase = prng.uniform(0.0, 2.0 * kPi);
    ps.scale = prng.uniform(0.92, 1.08);
    ps.cx = prng.uniform(-0.04, 0.04);
    ps.cy = prng.uniform(-0.04, 0.04);
    ps.xmid = prng.uniform(-0.03, 0.03);
    ps.bright = prng.uniform(0.95, 1.05);
  }

  // Stratified held-out split; unlabeled studies are drawn from the
  // development side only, so evaluation data keeps its labels.
  std::vector<bool> heldout(static_cast<std::size_t>(cfg.patients), false);
  std::vector<bool> unlabeled(static_cast<std::size_t>(cfg.patients), false);
  for (int c = 0; c < 3; ++c) {
    std::vector<int> members;
    for (int i = 0; i < cfg.patients; ++i)
      if (static_cast<int>(assignment[static_cast<std::size_t>(i)]) == c)
        members.push_back(i);
    Rng srng(derive_seed(seed, 0x5B117, static_cast<std::uint64_t>(c)));
    srng.shuffle(members);
    int n_held = static_cast<int>(std::lround(
        static_cast<double>(members.size()) * cfg.heldout_fraction));
    n_held = std::min<int>(n_held, static_cast<int>(members.size()));
    for (int i = 0; i < n_held; ++i)
      heldout[static_cast<std::size_t>(members[static_cast<std::size_t>(i)])] = true;

    std::vector<int> dev_members(members.begin() + n_held, members.end());
    Rng urng(derive_seed(seed, 0x0B5C0, static_cast<std::uint64_t>(c)));
    urng.shuffle(dev_members);
    const int n_unlab = static_cast<int>(std::lround(
        static_cast<double>(dev_members.size()) * cfg.unlabeled_fraction));
    for (int i = 0; i < n_unlab; ++i)
      unlabeled[static_cast<std::size_t>(dev_members[static_cast<std::size_t>(i)])] = true;
  }

  SyntheticDataset out;
  for (DatasetManifest* m : {&out.all, &out.dev, &out.heldout}) {
    m->frame_h = cfg.frame_hw;
    m->frame_w = cfg.frame_hw;
    m->base_dir = out_dir;
  }

  for (int i = 0; i < cfg.patients; ++i) {
    char sid[16], pid[16];
    std::snprintf(sid, sizeof sid, "s%04d", i);
    std::snprintf(pid, sizeof pid, "p%04d", i);
    StudyEntry entry;
    entry.study_id = sid;
    entry.patient_id = pid;
    entry.factor = scenes[static_cast<std::size_t>(i)].f;
    if (!unlabeled[static_cast<std::size_t>(i)])
      entry.label = assignment[static_cast<std::size_t>(i)];

    for (View view : all_views()) {
      const int vi = static_cast<int>(view);
      ViewClip clip;
      clip.view = view;
      clip.fps = 25.0;
      clip.frames = Tensor({cfg.frames_per_clip, cfg.frame_hw, cfg.frame_hw});
      const std::size_t plane =
          static_cast<std::size_t>(cfg.frame_hw) * cfg.frame_hw;
      for (int t = 0; t < cfg.frames_per_clip; ++t) {
        Rng frng(derive_seed(seed, 0xF4A3E, static_cast<std::uint64_t>(i),
                             static_cast<std::uint64_t>(vi),
                             static_cast<std::uint64_t>(t)));
        Tensor frame = render_frame(scenes[static_cast<std::size_t>(i)], vi, t,
                                    cfg.frames_per_clip, cfg.frame_hw,
                                    cfg.speckle, frng);
        std::copy_n(frame.data(), plane,
                    clip.frames.data() + static_cast<std::size_t>(t) * plane);
      }
      const std::string rel =
          "clips/" + entry.study_id + "_" + std::string(view_name(view)) + ".clip";
      save_clip((fs::path(out_dir) / rel).string(), clip);
      entry.clip_paths[view] = rel;
    }

    out.all.entries.push_back(entry);
    if (heldout[static_cast<std::size_t>(i)]) {
      StudyEntry held = entry;
      held.label = assignment[static_cast<std::size_t>(i)];  // always labeled
      out.heldout.entries.push_back(held);
    } else {
      out.dev.entries.push_back(entry);
    }
  }

  out.all.recount();
  out.dev.recount();
  out.heldout.recount();
  save_manifest(out.all, (fs::path(out_dir) / "manifest_all.txt").string());
  save_manifest(out.dev, (fs::path(out_dir) / "manifest_dev.txt").string());
  save_manifest(out.heldout, (fs::path(out_dir) / "manifest_heldout.txt").string());
  return out;
}

// ---------------------------------------------------------------------------
// folds
// ---------------------------------------------------------------------------

std::vector<FoldSplit> split_folds(const DatasetManifest& manifest, int k,
                                   std::uint64_t seed) {
  if (k < 2) throw DataError("split_folds: k must be >= 2");

  // Patients in first-appearance order; stratum = first labeled entry's
  // class, with a separate stratum for fully unlabeled patients.
  std::vector<std::string> patient_order;
  std::map<std::string, int> stratum;
  std::map<std::string, std::vector<int>> entries_of;
  for (int idx = 0; idx < static_cast<int>(manifest.entries.size()); ++idx) {
    const auto& e = manifest.entries[static_cast<std::size_t>(idx)];
    if (!entries_of.count(e.patient_id)) {
      patient_order.push_back(e.patient_id);
      stratum[e.patient_id] = kNumClasses;
    }
    entries_of[e.patient_id].push_back(idx);
    if (e.label && stratum[e.patient_id] == kNumClasses)
      stratum[e.patient_id] = static_cast<int>(*e.label);
  }

  std::array<std::vector<std::string>, kNumClasses + 1> by_stratum;
  for (const auto& pid : patient_order)
    by_stratum[static_cast<std::size_t>(stratum[pid])].push_back(pid);
  for (int c = 0; c < kNumClasses; ++c)
    if (static_cast<int>(by_stratum[static_cast<std::size_t>(c)].size()) < k)
      throw DataError(std::string("split_folds: class '") +
                      class_name(static_cast<PhClass>(c)) + "' has fewer than " +
                      std::to_string(k) + " patients");

  // Deal each stratum cyclically, carrying the offset across strata so fold
  // sizes stay within one patient of each other overall.
  std::vector<std::vector<std::string>> fold_patients(static_cast<std::size_t>(k));
  int offset = 0;
  for (int c = 0; c <= kNumClasses; ++c) {
    auto& members = by_stratum[static_cast<std::size_t>(c)];
    Rng rng(derive_seed(seed, 0xF07D, static_cast<std::uint64_t>(c)));
    rng.shuffle(members);
    for (std::size_t i = 0; i < members.size(); ++i)
      fold_patients[static_cast<std::size_t>((offset + static_cast<int>(i)) % k)]
          .push_back(members[i]);
    offset = (offset + static_cast<int>(members.size())) % k;
  }

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    std::vector<bool> in_val(manifest.entries.size(), false);
    for (const auto& pid : fold_patients[static_cast<std::size_t>(f)])
      for (int idx : entries_of[pid]) in_val[static_cast<std::size_t>(idx)] = true;
    for (int idx = 0; idx < static_cast<int>(manifest.entries.size()); ++idx)
      (in_val[static_cast<std::size_t>(idx)]
           ? folds[static_cast<std::size_t>(f)].val_indices
           : folds[static_cast<std::size_t>(f)].train_indices)
          .push_back(idx);
  }
  return folds;
}

// ---------------------------------------------------------------------------
// balanced batches
// ---------------------------------------------------------------------------

std::vector<Batch> balanced_batches(const std::vector<int>& labels,
                                    int num_classes, int batch_size,
                                    std::uint64_t seed) {
  if (num_classes < 1) throw DataError("balanced_batches: bad class count");
  if (batch_size < num_classes || batch_size % num_classes != 0)
    throw DataError(
        "balanced_batches: batch size must be divisible by the number of classes");
  std::vector<std::vector<int>> by_class(static_cast<std::size_t>(num_classes));
  for (int i = 0; i < static_cast<int>(labels.size()); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    if (c < 0 || c >= num_classes)
      throw DataError("balanced_batches: label out of range");
    by_class[static_cast<std::size_t>(c)].push_back(i);
  }
  for (int c = 0; c < num_classes; ++c)
    if (by_class[static_cast<std::size_t>(c)].empty())
      throw DataError("balanced_batches: class " + std::to_string(c) +
                      " has no studies");

  int majority = 0;
  for (int c = 1; c < num_classes; ++c)
    if (by_class[static_cast<std::size_t>(c)].size() >
        by_class[static_cast<std::size_t>(majority)].size())
      majority = c;
  const int quota = batch_size / num_classes;
  const int n_major =
      static_cast<int>(by_class[static_cast<std::size_t>(majority)].size());
  const int n_batches = (n_major + quota - 1) / quota;

  // Majority: one shuffled pass, consumed without replacement. Minorities:
  // cycle over reshuffled orders so appearance counts differ by at most one.
  std::vector<std::vector<int>> order(static_cast<std::size_t>(num_classes));
  std::vector<std::size_t> pos(static_cast<std::size_t>(num_classes), 0);
  std::vector<int> cycle_count(static_cast<std::size_t>(num_classes), 0);
  for (int c = 0; c < num_classes; ++c) {
    order[static_cast<std::size_t>(c)] = by_class[static_cast<std::size_t>(c)];
    Rng rng(derive_seed(seed, 0xBA7C4, static_cast<std::uint64_t>(c), 0));
    rng.shuffle(order[static_cast<std::size_t>(c)]);
  }

  std::vector<Batch> batches;
  std::uint64_t instance = 0;
  for (int b = 0; b < n_batches; ++b) {
    // When the majority does not divide evenly, the last batch shrinks but
    // stays perfectly class-uniform.
    const int take = std::min(quota, n_major - b * quota);
    Batch batch;
    for (int c = 0; c < num_classes; ++c) {
      auto& ord = order[static_cast<std::size_t>(c)];
      auto& p = pos[static_cast<std::size_t>(c)];
      for (int q = 0; q < take; ++q) {
        if (p == ord.size()) {
          ++cycle_count[static_cast<std::size_t>(c)];
          Rng rng(derive_seed(seed, 0xBA7C4, static_cast<std::uint64_t>(c),
                              static_cast<std::uint64_t>(
                                  cycle_count[static_cast<std::size_t>(c)])));
          rng.shuffle(ord);
          p = 0;
        }
        batch.push_back({ord[p++], derive_seed(seed, 0xA06B, instance++)});
      }
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace mvvae::data
