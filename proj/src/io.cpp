#include "hoisplat/io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <sstream>

namespace hoi {

namespace {

const char* kPlyProps[] = {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
                           "log_scale_0", "log_scale_1", "log_scale_2",
                           "opacity_logit", "red", "green", "blue"};
constexpr int kPlyPropCount = 14;

void gaussian_to_floats(const Gaussian& g, float* out) {
  out[0] = (float)g.position.x();
  out[1] = (float)g.position.y();
  out[2] = (float)g.position.z();
  out[3] = (float)g.rotation.w();
  out[4] = (float)g.rotation.x();
  out[5] = (float)g.rotation.y();
  out[6] = (float)g.rotation.z();
  out[7] = (float)g.log_scale.x();
  out[8] = (float)g.log_scale.y();
  out[9] = (float)g.log_scale.z();
  out[10] = (float)g.opacity_logit;
  out[11] = (float)g.color.x();
  out[12] = (float)g.color.y();
  out[13] = (float)g.color.z();
}

}  // namespace

void write_ply(const GaussianSet& set, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write ply: " + path);
  f << "ply\nformat binary_little_endian 1.0\n";
  f << "comment label " << (set.label == EntityLabel::Human ? "human" : "object") << "\n";
  f << "element vertex " << set.size() << "\n";
  for (const char* p : kPlyProps) f << "property float " << p << "\n";
  f << "end_header\n";
  std::vector<float> row(kPlyPropCount);
  for (const auto& g : set.gaussians) {
    gaussian_to_floats(g, row.data());
    f.write(reinterpret_cast<const char*>(row.data()), sizeof(float) * kPlyPropCount);
  }
}

GaussianSet read_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read ply: " + path);

  auto fail = [&](const std::string& what) -> ParseError {
    return ParseError(what, (size_t)f.tellg());
  };

  std::string line;
  if (!std::getline(f, line) || line != "ply") throw fail("not a ply file");
  size_t vertex_count = 0;
  bool in_vertex = false, binary_le = false;
  struct Prop {
    std::string name;
    int size;  // bytes
    bool is_float;
  };
  std::vector<Prop> props;
  std::string label_comment;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (tok == "comment") {
      std::string key;
      ls >> key;
      if (key == "label") ls >> label_comment;
    } else if (tok == "element") {
      std::string name;
      size_t n;
      ls >> name >> n;
      in_vertex = name == "vertex";
      if (in_vertex) vertex_count = n;
      else if (!props.empty()) break;  // only the vertex element is read
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      Prop p{name, 0, false};
      if (type == "float" || type == "float32" || type == "int" || type == "uint" ||
          type == "int32" || type == "uint32") {
        p.size = 4;
        p.is_float = type == "float" || type == "float32";
      } else if (type == "double" || type == "float64") {
        p.size = 8;
      } else if (type == "uchar" || type == "char" || type == "int8" || type == "uint8") {
        p.size = 1;
      } else if (type == "short" || type == "ushort" || type == "int16" || type == "uint16") {
        p.size = 2;
      } else {
        throw fail("unsupported property type " + type);
      }
      props.push_back(p);
    } else if (tok == "end_header") {
      break;
    }
  }
  if (!binary_le) throw fail("only binary_little_endian ply is supported");
  bool has_xyz = false;
  for (const auto& p : props)
    if (p.name == "x") has_xyz = true;
  if (!has_xyz) throw fail("vertex element lacks x property");

  size_t row_size = 0;
  for (const auto& p : props) row_size += p.size;

  GaussianSet set;
  if (label_comment == "human") set.label = EntityLabel::Human;
  set.gaussians.reserve(vertex_count);
  std::vector<char> row(row_size);
  for (size_t i = 0; i < vertex_count; ++i) {
    f.read(row.data(), row_size);
    if (!f) throw ParseError("truncated vertex data", (size_t)f.gcount() + i * row_size);
    Gaussian g;
    size_t off = 0;
    for (const auto& p : props) {
      if (p.is_float) {
        float v;
        std::memcpy(&v, row.data() + off, 4);
        if (p.name == "x") g.position.x() = v;
        else if (p.name == "y") g.position.y() = v;
        else if (p.name == "z") g.position.z() = v;
        else if (p.name == "rot_0") g.rotation.w() = v;
        else if (p.name == "rot_1") g.rotation.x() = v;
        else if (p.name == "rot_2") g.rotation.y() = v;
        else if (p.name == "rot_3") g.rotation.z() = v;
        else if (p.name == "log_scale_0") g.log_scale.x() = v;
        else if (p.name == "log_scale_1") g.log_scale.y() = v;
        else if (p.name == "log_scale_2") g.log_scale.z() = v;
        else if (p.name == "opacity_logit") g.opacity_logit = v;
        else if (p.name == "red") g.color.x() = v;
        else if (p.name == "green") g.color.y() = v;
        else if (p.name == "blue") g.color.z() = v;
      }
      off += p.size;
    }
    set.gaussians.push_back(g);
  }
  return set;
}

double linear_to_srgb(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double srgb_to_linear(double v) {
  v = std::clamp(v, 0.0, 1.0);
  return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

namespace {

void write_png_bytes(const std::string& path, int w, int h, int channels,
                     const std::vector<unsigned char>& bytes) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  if (!fp) throw std::runtime_error("cannot write png: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw std::runtime_error("png write failed: " + path);
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(bytes.data() + size_t(y) * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::vector<unsigned char> read_png_bytes(const std::string& path, int& w, int& h,
                                          int want_channels) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw std::runtime_error("cannot read png: " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw ParseError("png decode failed: " + path, 0);
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  if (want_channels == 3)
    png_set_gray_to_rgb(png);
  else
    png_set_rgb_to_gray(png, 1, -1, -1);
  png_read_update_info(png, info);
  std::vector<unsigned char> bytes(size_t(w) * h * want_channels);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y) rows[y] = bytes.data() + size_t(y) * w * want_channels;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return bytes;
}

}  // namespace

void write_png(const ImageRgb& img, const std::string& path) {
  std::vector<unsigned char> bytes(img.data.size());
  for (size_t i = 0; i < img.data.size(); ++i)
    bytes[i] = (unsigned char)std::lround(255.0 * linear_to_srgb(img.data[i]));
  write_png_bytes(path, img.width, img.height, 3, bytes);
}

ImageRgb read_png(const std::string& path) {
  int w, h;
  const auto bytes = read_png_bytes(path, w, h, 3);
  ImageRgb img(w, h);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = srgb_to_linear(bytes[i] / 255.0);
  return img;
}

void write_png_mask(const ImageGray& mask, const std::string& path) {
  std::vector<unsigned char> bytes(mask.data.size());
  for (size_t i = 0; i < mask.data.size(); ++i)
    bytes[i] = (unsigned char)std::lround(255.0 * std::clamp(mask.data[i], 0.0, 1.0));
  write_png_bytes(path, mask.width, mask.height, 1, bytes);
}

ImageGray read_png_mask(const std::string& path) {
  int w, h;
  const auto bytes = read_png_bytes(path, w, h, 1);
  ImageGray mask(w, h);
  for (size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = bytes[i] > 127 ? 1.0 : 0.0;
  return mask;
}

void write_cameras(const std::vector<Camera>& cams, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write cameras: " + path);
  f.precision(17);
  for (size_t i = 0; i < cams.size(); ++i) {
    const Camera& c = cams[i];
    const Quat& q = c.world_to_camera.rotation;
    const Vec3& t = c.world_to_camera.translation;
    f << i << " " << c.fx << " " << c.fy << " " << c.cx << " " << c.cy << " " << c.width
      << " " << c.height << " " << q.w() << " " << q.x() << " " << q.y() << " " << q.z()
      << " " << t.x() << " " << t.y() << " " << t.z() << "\n";
  }
}

std::vector<Camera> read_cameras(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read cameras: " + path);
  std::vector<Camera> cams;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') {
      offset += line.size() + 1;
      continue;
    }
    std::istringstream ls(line);
    int id;
    Camera c;
    double qw, qx, qy, qz;
    if (!(ls >> id >> c.fx >> c.fy >> c.cx >> c.cy >> c.width >> c.height >> qw >> qx >>
          qy >> qz >> c.world_to_camera.translation.x() >>
          c.world_to_camera.translation.y() >> c.world_to_camera.translation.z()))
      throw ParseError("bad camera line", offset);
    c.world_to_camera.rotation = Quat(qw, qx, qy, qz).normalized();
    cams.push_back(c);
    offset += line.size() + 1;
  }
  return cams;
}

void write_pose_track(const PoseTrack& track, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write pose track: " + path);
  f.precision(17);
  for (size_t t = 0; t < track.size(); ++t) {
    const Quat& q = track.poses[t].rotation;
    const Vec3& tr = track.poses[t].translation;
    f << t << " " << q.w() << " " << q.x() << " " << q.y() << " " << q.z() << " " << tr.x()
      << " " << tr.y() << " " << tr.z() << " " << track.residuals[t] << " "
      << int(track.converged[t]) << "\n";
  }
}

PoseTrack read_pose_track(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read pose track: " + path);
  PoseTrack track;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    size_t t;
    double qw, qx, qy, qz, residual;
    int converged;
    Se3Pose p;
    if (!(ls >> t >> qw >> qx >> qy >> qz >> p.translation.x() >> p.translation.y() >>
          p.translation.z() >> residual >> converged))
      throw ParseError("bad pose track line", offset);
    p.rotation = Quat(qw, qx, qy, qz).normalized();
    track.poses.push_back(p);
    track.residuals.push_back(residual);
    track.converged.push_back((char)converged);
    offset += line.size() + 1;
  }
  return track;
}

void write_pose_curve(const std::vector<PoseVector>& poses, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write pose curve: " + path);
  f.precision(17);
  for (size_t t = 0; t < poses.size(); ++t) {
    f << t << " " << poses[t].root_translation.x() << " " << poses[t].root_translation.y()
      << " " << poses[t].root_translation.z();
    for (const auto& r : poses[t].joint_rotations)
      f << " " << r.x() << " " << r.y() << " " << r.z();
    f << "\n";
  }
}

std::vector<PoseVector> read_pose_curve(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read pose curve: " + path);
  std::vector<PoseVector> poses;
  std::string line;
  size_t offset = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    size_t t;
    PoseVector p;
    if (!(ls >> t >> p.root_translation.x() >> p.root_translation.y() >>
          p.root_translation.z()))
      throw ParseError("bad pose curve line", offset);
    Vec3 r;
    while (ls >> r.x() >> r.y() >> r.z()) p.joint_rotations.push_back(r);
    poses.push_back(p);
    offset += line.size() + 1;
  }
  return poses;
}

uint64_t hash_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot hash: " + path);
  uint64_t h = 1469598103934665603ull;
  char buf[4096];
  while (f.read(buf, sizeof buf) || f.gcount() > 0) {
    for (std::streamsize i = 0; i < f.gcount(); ++i) {
      h ^= (unsigned char)buf[i];
      h *= 1099511628211ull;
    }
    if (!f) break;
  }
  return h;
}

}  // namespace hoi
