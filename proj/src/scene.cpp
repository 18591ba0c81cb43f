#include "fo3d/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "fo3d/errors.hpp"

namespace fs = std::filesystem;

namespace fo3d {

namespace {

std::vector<double> read_numbers(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("missing file: " + path.string());
  std::vector<double> values;
  std::string token;
  while (is >> token) {
    try {
      std::size_t used = 0;
      const double v = std::stod(token, &used);
      if (used != token.size()) throw std::invalid_argument(token);
      values.push_back(v);
    } catch (const std::exception&) {
      // ScanNet writes "-inf" for frames with lost tracking; stod handles that,
      // anything else is garbage.
      throw LoadError(path.string() + ": not a number: '" + token + "'");
    }
  }
  return values;
}

fs::path first_existing(const std::vector<fs::path>& candidates) {
  for (const auto& p : candidates) {
    if (fs::exists(p)) return p;
  }
  return {};
}

}  // namespace

void validate_pose(const Eigen::Matrix4d& pose, double tolerance) {
  if (!pose.allFinite()) throw LoadError("pose contains non-finite values");
  const Eigen::RowVector4d bottom = pose.row(3);
  if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-6) {
    throw LoadError("pose bottom row must be (0, 0, 0, 1)");
  }
  const Eigen::Matrix3d r = pose.topLeftCorner<3, 3>();
  const double dev = (r.transpose() * r - Eigen::Matrix3d::Identity()).norm();
  if (dev > tolerance) {
    std::ostringstream msg;
    msg << "pose rotation is not orthonormal (||R^T R - I||_F = " << dev << ")";
    throw LoadError(msg.str());
  }
}

Eigen::Matrix4d read_pose_txt(const fs::path& path) {
  const auto v = read_numbers(path);
  if (v.size() != 16) throw LoadError(path.string() + ": pose must hold 16 numbers");
  Eigen::Matrix4d pose;
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) pose(r, c) = v[static_cast<std::size_t>(r * 4 + c)];
  }
  return pose;
}

void write_pose_txt(const fs::path& path, const Eigen::Matrix4d& pose) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::setprecision(17);
  for (int r = 0; r < 4; ++r) {
    os << pose(r, 0) << ' ' << pose(r, 1) << ' ' << pose(r, 2) << ' ' << pose(r, 3) << '\n';
  }
}

Intrinsics read_intrinsics_txt(const fs::path& path) {
  const auto v = read_numbers(path);
  Intrinsics k;
  if (v.size() == 4) {
    k = {v[0], v[1], v[2], v[3]};
  } else if (v.size() == 16 || v.size() == 9) {
    const std::size_t stride = v.size() == 16 ? 4 : 3;
    k = {v[0], v[stride + 1], v[2], v[stride + 2]};
  } else {
    throw LoadError(path.string() + ": intrinsics must be 'fx fy cx cy' or a 3x3/4x4 matrix");
  }
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) throw LoadError(path.string() + ": fx and fy must be > 0");
  return k;
}

void write_intrinsics_txt(const fs::path& path, const Intrinsics& k) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << std::setprecision(17) << k.fx << ' ' << k.fy << ' ' << k.cx << ' ' << k.cy << '\n';
}

std::vector<int> list_frame_ids(const fs::path& scene_dir) {
  const fs::path depth_dir = scene_dir / "depth";
  if (!fs::is_directory(depth_dir)) throw LoadError("missing directory: " + depth_dir.string());
  std::vector<int> ids;
  for (const auto& entry : fs::directory_iterator(depth_dir)) {
    if (entry.path().extension() != ".png") continue;
    const std::string stem = entry.path().stem().string();
    if (stem.empty() || !std::all_of(stem.begin(), stem.end(), ::isdigit)) continue;
    ids.push_back(std::stoi(stem));
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

Frame load_frame(const fs::path& scene_dir, int frame_id) {
  const std::string id = std::to_string(frame_id);
  const fs::path color = first_existing(
      {scene_dir / "color" / (id + ".png"), scene_dir / "color" / (id + ".jpg")});
  if (color.empty()) throw LoadError("missing color image for frame " + id);
  const fs::path depth = scene_dir / "depth" / (id + ".png");
  const fs::path pose = scene_dir / "pose" / (id + ".txt");
  const fs::path intr = first_existing({scene_dir / "intrinsic" / (id + ".txt"),
                                        scene_dir / "intrinsic" / "intrinsic_depth.txt"});
  if (intr.empty()) throw LoadError("missing intrinsics for frame " + id);
  if (!fs::exists(depth)) throw LoadError("missing file: " + depth.string());

  Frame f;
  f.id = frame_id;
  f.image = read_rgb_png(color);
  f.depth = read_depth_png(depth);
  f.pose = read_pose_txt(pose);
  try {
    validate_pose(f.pose);
  } catch (const LoadError& e) {
    throw LoadError(pose.string() + ": " + e.what());
  }
  f.intrinsics = read_intrinsics_txt(intr);
  return f;
}

std::vector<int> subsample_frames(const std::vector<int>& frame_ids, int stride) {
  if (stride < 1) throw std::invalid_argument("subsample_frames: stride must be >= 1");
  std::vector<int> out;
  for (std::size_t i = 0; i < frame_ids.size(); i += static_cast<std::size_t>(stride)) {
    out.push_back(frame_ids[i]);
  }
  return out;
}

fs::path find_point_cloud(const fs::path& scene_dir) {
  if (fs::exists(scene_dir / "cloud.ply")) return scene_dir / "cloud.ply";
  std::vector<fs::path> plys;
  for (const auto& entry : fs::directory_iterator(scene_dir)) {
    if (entry.path().extension() == ".ply") plys.push_back(entry.path());
  }
  if (plys.empty()) throw LoadError("no point cloud (*.ply) in " + scene_dir.string());
  std::sort(plys.begin(), plys.end());
  // Prefer the ScanNet reconstruction the labels are defined on.
  for (const auto& p : plys) {
    if (p.filename().string().find("_vh_clean_2.ply") != std::string::npos) return p;
  }
  return plys.front();
}

namespace {

struct PlyProperty {
  std::string name;
  std::string type;
  bool is_list = false;
};

struct PlyElement {
  std::string name;
  std::size_t count = 0;
  std::vector<PlyProperty> properties;
};

std::size_t ply_type_size(const std::string& t) {
  if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
  if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
  if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" || t == "float32")
    return 4;
  if (t == "double" || t == "float64") return 8;
  throw FormatError("PLY: unknown property type '" + t + "'");
}

double ply_read_binary(const char* p, const std::string& t) {
  auto load = [p](auto v) {
    std::memcpy(&v, p, sizeof(v));
    return static_cast<double>(v);
  };
  if (t == "char" || t == "int8") return load(std::int8_t{});
  if (t == "uchar" || t == "uint8") return load(std::uint8_t{});
  if (t == "short" || t == "int16") return load(std::int16_t{});
  if (t == "ushort" || t == "uint16") return load(std::uint16_t{});
  if (t == "int" || t == "int32") return load(std::int32_t{});
  if (t == "uint" || t == "uint32") return load(std::uint32_t{});
  if (t == "float" || t == "float32") return load(float{});
  return load(double{});
}

}  // namespace

PointCloud read_ply(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (line.rfind("ply", 0) != 0) throw FormatError(path.string() + ": not a PLY file");

  bool binary = false;
  std::vector<PlyElement> elements;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw FormatError(path.string() + ": unsupported PLY format " + fmt);
    } else if (kw == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw FormatError(path.string() + ": property before element");
      PlyProperty prop;
      std::string type;
      ls >> type;
      if (type == "list") {
        prop.is_list = true;
        std::string count_type, item_type;
        ls >> count_type >> item_type >> prop.name;
        prop.type = item_type;
      } else {
        prop.type = type;
        ls >> prop.name;
        ply_type_size(prop.type);
      }
      elements.back().properties.push_back(prop);
    } else if (kw == "end_header") {
      break;
    }
  }

  PointCloud cloud;
  for (const auto& e : elements) {
    const bool is_vertex = e.name == "vertex";
    if (!is_vertex) {
      const bool has_list = std::any_of(e.properties.begin(), e.properties.end(),
                                        [](const PlyProperty& p) { return p.is_list; });
      if (has_list) throw FormatError(path.string() + ": list element before vertex element");
    }
    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    std::size_t stride = 0;
    std::vector<std::size_t> offsets;
    for (std::size_t i = 0; i < e.properties.size(); ++i) {
      const auto& name = e.properties[i].name;
      if (name == "x") ix = static_cast<int>(i);
      if (name == "y") iy = static_cast<int>(i);
      if (name == "z") iz = static_cast<int>(i);
      if (name == "red") ir = static_cast<int>(i);
      if (name == "green") ig = static_cast<int>(i);
      if (name == "blue") ib = static_cast<int>(i);
      if (e.properties[i].is_list) {
        throw FormatError(path.string() + ": list property in vertex element");
      }
      offsets.push_back(stride);
      stride += ply_type_size(e.properties[i].type);
    }
    if (is_vertex && (ix < 0 || iy < 0 || iz < 0)) {
      throw FormatError(path.string() + ": vertex element lacks x/y/z");
    }
    const bool has_color = is_vertex && ir >= 0 && ig >= 0 && ib >= 0;

    std::vector<double> row(e.properties.size());
    std::vector<char> raw(stride);
    if (is_vertex) {
      cloud.positions.reserve(e.count);
      if (has_color) cloud.colors.emplace().reserve(e.count);
    }
    for (std::size_t n = 0; n < e.count; ++n) {
      if (binary) {
        if (!is.read(raw.data(), static_cast<std::streamsize>(stride))) {
          throw FormatError(path.string() + ": truncated PLY payload");
        }
        for (std::size_t i = 0; i < row.size(); ++i) {
          row[i] = ply_read_binary(raw.data() + offsets[i], e.properties[i].type);
        }
      } else {
        for (auto& v : row) {
          if (!(is >> v)) throw FormatError(path.string() + ": truncated PLY payload");
        }
      }
      if (!is_vertex) continue;
      Eigen::Vector3f p(static_cast<float>(row[static_cast<std::size_t>(ix)]),
                        static_cast<float>(row[static_cast<std::size_t>(iy)]),
                        static_cast<float>(row[static_cast<std::size_t>(iz)]));
      if (!p.allFinite()) throw DataError(path.string() + ": non-finite vertex position");
      cloud.positions.push_back(p);
      if (has_color) {
        cloud.colors->push_back({static_cast<std::uint8_t>(row[static_cast<std::size_t>(ir)]),
                                 static_cast<std::uint8_t>(row[static_cast<std::size_t>(ig)]),
                                 static_cast<std::uint8_t>(row[static_cast<std::size_t>(ib)])});
      }
    }
    if (is_vertex) break;
  }
  if (cloud.positions.empty()) throw DataError(path.string() + ": point cloud has no points");
  return cloud;
}

void write_ply(const fs::path& path, const PointCloud& cloud) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  const bool color = cloud.colors.has_value();
  if (color && cloud.colors->size() != cloud.size()) {
    throw std::invalid_argument("write_ply: color count does not match point count");
  }
  os << "ply\nformat binary_little_endian 1.0\n"
     << "element vertex " << cloud.size() << "\n"
     << "property float x\nproperty float y\nproperty float z\n";
  if (color) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Eigen::Vector3f& p = cloud.positions[i];
    os.write(reinterpret_cast<const char*>(p.data()), 3 * sizeof(float));
    if (color) os.write(reinterpret_cast<const char*>((*cloud.colors)[i].data()), 3);
  }
}

}  // namespace fo3d
