// Copyright Contributors to the spikesplat project
// SPDX-License-Identifier: Apache-2.0

#include "spikesplat/io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace spikesplat::io {
namespace {

using nlohmann::json;

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error(io_error::kind::open_failed, "cannot open " + path);
    f.seekg(0, std::ios::end);
    std::streamoff len = f.tellg();
    f.seekg(0, std::ios::beg);
    std::vector<uint8_t> buf(static_cast<size_t>(len));
    if (len > 0) f.read(reinterpret_cast<char*>(buf.data()), len);
    if (!f) throw io_error(io_error::kind::truncated, "short read on " + path);
    return buf;
}

void write_file(const std::string& path, const void* data, size_t size) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error(io_error::kind::open_failed, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!f) throw io_error(io_error::kind::open_failed, "short write on " + path);
}

void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>(v >> (8 * i)));
}
void put_f64(std::vector<uint8_t>& b, double v) { put_u64(b, std::bit_cast<uint64_t>(v)); }
void put_f32(std::vector<uint8_t>& b, float v) { put_u32(b, std::bit_cast<uint32_t>(v)); }

struct Cursor {
    const uint8_t* data;
    size_t size;
    size_t pos = 0;
    std::string path;

    void need(size_t n) const {
        if (pos + n > size)
            throw io_error(io_error::kind::truncated, path + ": truncated");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data[pos + i]) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    float f32() { return std::bit_cast<float>(u32()); }
    const uint8_t* bytes(size_t n) {
        need(n);
        const uint8_t* p = data + pos;
        pos += n;
        return p;
    }
    bool done() const { return pos == size; }
    size_t remaining() const { return size - pos; }
};

constexpr uint32_t kSpikeVersion = 1;
constexpr uint32_t kRnuVersion = 1;
constexpr uint32_t kCkptVersion = 1;

} // namespace

// ---------------------------------------------------------------- spike .dat

void write_spike_dat(const SpikeStream& s, const std::string& path) {
    std::vector<uint8_t> buf;
    buf.reserve(36 + s.bits.size());
    buf.insert(buf.end(), {'S', 'P', 'K', '1'});
    put_u32(buf, kSpikeVersion);
    put_u32(buf, static_cast<uint32_t>(s.width));
    put_u32(buf, static_cast<uint32_t>(s.height));
    put_u32(buf, static_cast<uint32_t>(s.window));
    put_f64(buf, s.threshold);
    put_f64(buf, s.timestep_hz);
    buf.insert(buf.end(), s.bits.begin(), s.bits.end());
    write_file(path, buf.data(), buf.size());
}

SpikeStream read_spike_dat(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    Cursor c{buf.data(), buf.size(), 0, path};
    const uint8_t* magic = c.bytes(4);
    if (std::memcmp(magic, "SPK1", 4) != 0)
        throw io_error(io_error::kind::bad_magic, path + ": not a SPK1 file");
    uint32_t version = c.u32();
    if (version != kSpikeVersion)
        throw io_error(io_error::kind::version_mismatch,
                       path + ": unsupported spike file version " + std::to_string(version));
    SpikeStream s;
    s.width = static_cast<int>(c.u32());
    s.height = static_cast<int>(c.u32());
    s.window = static_cast<int>(c.u32());
    s.threshold = c.f64();
    s.timestep_hz = c.f64();
    if (s.width <= 0 || s.height <= 0 || s.window < 0 || !(s.threshold > 0.0))
        throw io_error(io_error::kind::parse, path + ": invalid spike header fields");
    const size_t payload =
        static_cast<size_t>(s.row_bytes()) * s.height * static_cast<size_t>(s.window);
    if (c.remaining() < payload)
        throw io_error(io_error::kind::truncated, path + ": payload shorter than header claims");
    if (c.remaining() > payload)
        throw io_error(io_error::kind::parse, path + ": trailing bytes after payload");
    const uint8_t* p = c.bytes(payload);
    s.bits.assign(p, p + payload);
    return s;
}

SpikeStream read_spike_dat_raw(const std::string& path, int width, int height,
                               int window, double threshold, double timestep_hz) {
    if (width <= 0 || height <= 0 || window <= 0)
        throw invalid_parameter_error("raw spike read: geometry must be positive");
    std::vector<uint8_t> buf = read_file(path);
    SpikeStream s = SpikeStream::create(width, height, window, threshold, timestep_hz);
    if (buf.size() < s.bits.size())
        throw io_error(io_error::kind::truncated, path + ": raw payload too short");
    if (buf.size() > s.bits.size())
        throw io_error(io_error::kind::parse, path + ": raw payload larger than W*H*N bits");
    s.bits = std::move(buf);
    return s;
}

// --------------------------------------------------------------------- poses

std::vector<CameraView> read_poses(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    json doc;
    try {
        doc = json::parse(buf.begin(), buf.end());
    } catch (const json::exception& e) {
        throw io_error(io_error::kind::parse, path + ": " + e.what());
    }

    try {
        CameraView base;
        base.fx = doc.at("fx").get<double>();
        base.fy = doc.at("fy").get<double>();
        base.cx = doc.at("cx").get<double>();
        base.cy = doc.at("cy").get<double>();
        base.width = doc.at("width").get<int>();
        base.height = doc.at("height").get<int>();
        base.near_z = doc.value("near", 0.01);
        base.far_z = doc.value("far", 100.0);

        std::vector<CameraView> out;
        for (const auto& frame : doc.at("frames")) {
            const auto& m = frame.at("camera_to_world");
            if (!m.is_array() || m.size() != 16)
                throw io_error(io_error::kind::parse,
                               path + ": camera_to_world must hold 16 numbers (row-major)");
            Eigen::Matrix4d c2w;
            for (int r = 0; r < 4; ++r)
                for (int cc = 0; cc < 4; ++cc)
                    c2w(r, cc) = m[r * 4 + cc].get<double>();

            Eigen::RowVector4d bottom = c2w.row(3);
            if ((bottom - Eigen::RowVector4d(0, 0, 0, 1)).cwiseAbs().maxCoeff() > 1e-9)
                throw io_error(io_error::kind::validation,
                               path + ": camera_to_world bottom row must be 0 0 0 1");
            Eigen::Matrix3d r = c2w.topLeftCorner<3, 3>();
            double dev = (r * r.transpose() - Eigen::Matrix3d::Identity())
                             .cwiseAbs()
                             .maxCoeff();
            if (dev > 1e-4)
                throw io_error(io_error::kind::validation,
                               path + ": non-rigid rotation block (orthonormality error " +
                                   std::to_string(dev) + ")");
            // snap to SO(3) so CameraView's tighter invariant holds
            Eigen::JacobiSVD<Eigen::Matrix3d> svd(
                r, Eigen::ComputeFullU | Eigen::ComputeFullV);
            Eigen::Matrix3d rs = svd.matrixU() * svd.matrixV().transpose();
            if (rs.determinant() < 0.0)
                throw io_error(io_error::kind::validation,
                               path + ": rotation block is a reflection");
            Eigen::Vector3d t = c2w.topRightCorner<3, 1>();

            CameraView view = base;
            view.world_to_camera.setIdentity();
            view.world_to_camera.topLeftCorner<3, 3>() = rs.transpose();
            view.world_to_camera.topRightCorner<3, 1>() = -rs.transpose() * t;
            view.validate();
            out.push_back(view);
        }
        return out;
    } catch (const json::exception& e) {
        throw io_error(io_error::kind::parse, path + ": " + e.what());
    }
}

void write_poses(const std::vector<CameraView>& views, const std::string& path) {
    if (views.empty()) throw invalid_parameter_error("write_poses: empty view list");
    json doc;
    const CameraView& base = views.front();
    doc["fx"] = base.fx;
    doc["fy"] = base.fy;
    doc["cx"] = base.cx;
    doc["cy"] = base.cy;
    doc["width"] = base.width;
    doc["height"] = base.height;
    doc["near"] = base.near_z;
    doc["far"] = base.far_z;
    doc["frames"] = json::array();
    for (const CameraView& v : views) {
        Eigen::Matrix3d r = v.rotation().transpose();
        Eigen::Vector3d t = -r * v.translation();
        Eigen::Matrix4d c2w = Eigen::Matrix4d::Identity();
        c2w.topLeftCorner<3, 3>() = r;
        c2w.topRightCorner<3, 1>() = t;
        json m = json::array();
        for (int row = 0; row < 4; ++row)
            for (int col = 0; col < 4; ++col) m.push_back(c2w(row, col));
        doc["frames"].push_back({{"camera_to_world", m}});
    }
    std::string text = doc.dump(2);
    text.push_back('\n');
    write_file(path, text.data(), text.size());
}

// ----------------------------------------------------------------------- PLY

namespace {

struct PlyProperty {
    std::string name;
    int size = 0;
    enum class Kind { f32, f64, u8, other } kind = Kind::other;
};

int ply_type_size(const std::string& t) {
    if (t == "char" || t == "uchar" || t == "int8" || t == "uint8") return 1;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    if (t == "int" || t == "uint" || t == "int32" || t == "uint32" || t == "float" ||
        t == "float32")
        return 4;
    if (t == "double" || t == "float64") return 8;
    return 0;
}

} // namespace

PointCloud read_ply_points(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    // header is ASCII lines up to "end_header"
    size_t pos = 0;
    auto next_line = [&]() -> std::string {
        if (pos >= buf.size())
            throw io_error(io_error::kind::truncated, path + ": header ends early");
        size_t start = pos;
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
        std::string line(reinterpret_cast<const char*>(buf.data() + start), pos - start);
        if (pos < buf.size()) ++pos;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        return line;
    };

    if (next_line() != "ply")
        throw io_error(io_error::kind::bad_magic, path + ": missing ply magic");

    bool binary = false;
    bool format_seen = false;
    size_t vertex_count = 0;
    bool in_vertex = false;
    bool vertex_seen = false;
    std::vector<PlyProperty> props;

    for (;;) {
        std::string line = next_line();
        std::istringstream ss(line);
        std::string tok;
        ss >> tok;
        if (tok == "end_header") break;
        if (tok == "comment" || tok == "obj_info" || tok.empty()) continue;
        if (tok == "format") {
            std::string fmt;
            ss >> fmt;
            if (fmt == "ascii") binary = false;
            else if (fmt == "binary_little_endian") binary = true;
            else
                throw io_error(io_error::kind::unsupported,
                               path + ": unsupported ply format " + fmt);
            format_seen = true;
        } else if (tok == "element") {
            std::string name;
            size_t count;
            ss >> name >> count;
            if (name == "vertex") {
                if (binary && vertex_seen)
                    throw io_error(io_error::kind::parse, path + ": duplicate vertex element");
                in_vertex = true;
                vertex_seen = true;
                vertex_count = count;
            } else {
                if (binary && !vertex_seen)
                    throw io_error(io_error::kind::unsupported,
                                   path + ": binary ply with elements before vertex");
                in_vertex = false;
            }
        } else if (tok == "property") {
            if (!in_vertex) continue;
            std::string type;
            ss >> type;
            if (type == "list")
                throw io_error(io_error::kind::unsupported,
                               path + ": list properties on vertex element");
            PlyProperty p;
            ss >> p.name;
            p.size = ply_type_size(type);
            if (p.size == 0)
                throw io_error(io_error::kind::parse, path + ": unknown property type " + type);
            if (type == "float" || type == "float32") p.kind = PlyProperty::Kind::f32;
            else if (type == "double" || type == "float64") p.kind = PlyProperty::Kind::f64;
            else if (type == "uchar" || type == "uint8") p.kind = PlyProperty::Kind::u8;
            props.push_back(p);
        }
    }
    if (!format_seen)
        throw io_error(io_error::kind::parse, path + ": missing format line");
    if (!vertex_seen)
        throw io_error(io_error::kind::parse, path + ": missing vertex element");

    int ix = -1, iy = -1, iz = -1, ir = -1, ig = -1, ib = -1;
    for (size_t i = 0; i < props.size(); ++i) {
        if (props[i].name == "x") ix = static_cast<int>(i);
        else if (props[i].name == "y") iy = static_cast<int>(i);
        else if (props[i].name == "z") iz = static_cast<int>(i);
        else if (props[i].name == "red") ir = static_cast<int>(i);
        else if (props[i].name == "green") ig = static_cast<int>(i);
        else if (props[i].name == "blue") ib = static_cast<int>(i);
    }
    if (ix < 0 || iy < 0 || iz < 0)
        throw io_error(io_error::kind::parse, path + ": vertex element lacks x/y/z properties");
    const bool has_color = ir >= 0 && ig >= 0 && ib >= 0;

    PointCloud cloud;
    cloud.positions.reserve(vertex_count);
    if (has_color) cloud.colors.reserve(vertex_count);

    if (!binary) {
        for (size_t v = 0; v < vertex_count; ++v) {
            std::istringstream ss(next_line());
            std::vector<double> vals(props.size());
            for (size_t i = 0; i < props.size(); ++i) {
                if (!(ss >> vals[i]))
                    throw io_error(io_error::kind::truncated,
                                   path + ": vertex line " + std::to_string(v) + " too short");
            }
            cloud.positions.emplace_back(vals[ix], vals[iy], vals[iz]);
            if (has_color)
                cloud.colors.emplace_back(vals[ir] / 255.0, vals[ig] / 255.0,
                                          vals[ib] / 255.0);
        }
    } else {
        size_t stride = 0;
        for (const auto& p : props) stride += static_cast<size_t>(p.size);
        if (buf.size() - pos < stride * vertex_count)
            throw io_error(io_error::kind::truncated, path + ": binary vertex data truncated");
        auto read_val = [&](const uint8_t* base, const PlyProperty& p) -> double {
            switch (p.kind) {
            case PlyProperty::Kind::f32: {
                float f;
                std::memcpy(&f, base, 4);
                return f;
            }
            case PlyProperty::Kind::f64: {
                double d;
                std::memcpy(&d, base, 8);
                return d;
            }
            case PlyProperty::Kind::u8: return *base;
            default: return 0.0;
            }
        };
        for (size_t v = 0; v < vertex_count; ++v) {
            const uint8_t* rec = buf.data() + pos + v * stride;
            size_t offsets[64];
            size_t off = 0;
            for (size_t i = 0; i < props.size() && i < 64; ++i) {
                offsets[i] = off;
                off += static_cast<size_t>(props[i].size);
            }
            cloud.positions.emplace_back(read_val(rec + offsets[ix], props[ix]),
                                         read_val(rec + offsets[iy], props[iy]),
                                         read_val(rec + offsets[iz], props[iz]));
            if (has_color)
                cloud.colors.emplace_back(read_val(rec + offsets[ir], props[ir]) / 255.0,
                                          read_val(rec + offsets[ig], props[ig]) / 255.0,
                                          read_val(rec + offsets[ib], props[ib]) / 255.0);
        }
    }
    return cloud;
}

void write_ply_points(const PointCloud& cloud, const std::string& path, bool binary) {
    std::ostringstream head;
    head << "ply\n"
         << (binary ? "format binary_little_endian 1.0\n" : "format ascii 1.0\n")
         << "element vertex " << cloud.positions.size() << "\n"
         << "property float x\nproperty float y\nproperty float z\n";
    if (cloud.has_colors())
        head << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    head << "end_header\n";

    std::string out = head.str();
    if (binary) {
        std::vector<uint8_t> body;
        body.reserve(cloud.positions.size() * 15);
        for (size_t i = 0; i < cloud.positions.size(); ++i) {
            for (int c = 0; c < 3; ++c)
                put_f32(body, static_cast<float>(cloud.positions[i](c)));
            if (cloud.has_colors())
                for (int c = 0; c < 3; ++c)
                    body.push_back(static_cast<uint8_t>(
                        std::lround(255.0 * clamp01(cloud.colors[i](c)))));
        }
        out.append(reinterpret_cast<const char*>(body.data()), body.size());
    } else {
        std::ostringstream body;
        body.precision(9);
        for (size_t i = 0; i < cloud.positions.size(); ++i) {
            body << static_cast<float>(cloud.positions[i].x()) << " "
                 << static_cast<float>(cloud.positions[i].y()) << " "
                 << static_cast<float>(cloud.positions[i].z());
            if (cloud.has_colors())
                body << " " << std::lround(255.0 * clamp01(cloud.colors[i](0))) << " "
                     << std::lround(255.0 * clamp01(cloud.colors[i](1))) << " "
                     << std::lround(255.0 * clamp01(cloud.colors[i](2)));
            body << "\n";
        }
        out += body.str();
    }
    write_file(path, out.data(), out.size());
}

// -------------------------------------------------------------------- images

namespace {

uint8_t to_u8(double v) { return static_cast<uint8_t>(std::lround(255.0 * clamp01(v))); }

uint32_t crc32_of(const uint8_t* data, size_t n, uint32_t crc = 0xffffffffu) {
    static uint32_t table[256];
    static bool init = false;
    if (!init) {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        init = true;
    }
    for (size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc;
}

void put_be32(std::vector<uint8_t>& b, uint32_t v) {
    b.push_back(static_cast<uint8_t>(v >> 24));
    b.push_back(static_cast<uint8_t>(v >> 16));
    b.push_back(static_cast<uint8_t>(v >> 8));
    b.push_back(static_cast<uint8_t>(v));
}

void png_chunk(std::vector<uint8_t>& out, const char type[4],
               const std::vector<uint8_t>& data) {
    put_be32(out, static_cast<uint32_t>(data.size()));
    size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uint32_t crc = crc32_of(out.data() + crc_start, out.size() - crc_start) ^ 0xffffffffu;
    put_be32(out, crc);
}

void write_png_rgb(const Image& img, const std::string& path) {
    // raw scanlines with filter byte 0
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.height) * (1 + 3 * img.width));
    for (int y = 0; y < img.height; ++y) {
        raw.push_back(0);
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) raw.push_back(to_u8(img.at(x, y, c)));
    }
    // zlib stream with stored deflate blocks
    std::vector<uint8_t> z;
    z.push_back(0x78);
    z.push_back(0x01);
    size_t off = 0;
    while (off < raw.size() || raw.empty()) {
        size_t len = std::min<size_t>(65535, raw.size() - off);
        bool final = off + len == raw.size();
        z.push_back(final ? 1 : 0);
        z.push_back(static_cast<uint8_t>(len & 0xff));
        z.push_back(static_cast<uint8_t>(len >> 8));
        z.push_back(static_cast<uint8_t>(~len & 0xff));
        z.push_back(static_cast<uint8_t>((~len >> 8) & 0xff));
        z.insert(z.end(), raw.begin() + off, raw.begin() + off + len);
        off += len;
        if (final) break;
    }
    uint32_t a = 1, b = 0;
    for (uint8_t v : raw) {
        a = (a + v) % 65521;
        b = (b + a) % 65521;
    }
    put_be32(z, (b << 16) | a);

    std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(img.width));
    put_be32(ihdr, static_cast<uint32_t>(img.height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(2); // truecolor
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    png_chunk(out, "IHDR", ihdr);
    png_chunk(out, "IDAT", z);
    png_chunk(out, "IEND", {});
    write_file(path, out.data(), out.size());
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

} // namespace

void write_image(const Image& img, const std::string& path) {
    if (img.width <= 0 || img.height <= 0)
        throw invalid_parameter_error("write_image: empty image");
    if (ends_with(path, ".pgm")) {
        if (img.channels != 1)
            throw invalid_parameter_error("write_image: .pgm requires 1 channel");
        std::ostringstream head;
        head << "P5\n" << img.width << " " << img.height << "\n255\n";
        std::string out = head.str();
        for (double v : img.data) out.push_back(static_cast<char>(to_u8(v)));
        write_file(path, out.data(), out.size());
        return;
    }
    if (ends_with(path, ".ppm")) {
        if (img.channels != 3)
            throw invalid_parameter_error("write_image: .ppm requires 3 channels");
        std::ostringstream head;
        head << "P6\n" << img.width << " " << img.height << "\n255\n";
        std::string out = head.str();
        for (double v : img.data) out.push_back(static_cast<char>(to_u8(v)));
        write_file(path, out.data(), out.size());
        return;
    }
    if (ends_with(path, ".png")) {
        if (img.channels != 3)
            throw invalid_parameter_error("write_image: .png requires 3 channels");
        write_png_rgb(img, path);
        return;
    }
    throw invalid_parameter_error("write_image: unsupported extension on " + path);
}

Image read_image(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    Cursor c{buf.data(), buf.size(), 0, path};
    auto token = [&]() -> std::string {
        // PNM tokens separated by whitespace, # comments to end of line
        std::string t;
        while (c.pos < c.size) {
            char ch = static_cast<char>(c.data[c.pos]);
            if (ch == '#') {
                while (c.pos < c.size && c.data[c.pos] != '\n') ++c.pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
                if (!t.empty()) return t;
                ++c.pos;
            } else {
                t.push_back(ch);
                ++c.pos;
            }
        }
        if (t.empty())
            throw io_error(io_error::kind::truncated, path + ": header ends early");
        return t;
    };
    std::string magic = token();
    int channels;
    if (magic == "P5") channels = 1;
    else if (magic == "P6") channels = 3;
    else
        throw io_error(io_error::kind::bad_magic, path + ": not a P5/P6 file");
    int w, h, maxval;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw io_error(io_error::kind::parse, path + ": bad PNM header");
    }
    if (w <= 0 || h <= 0)
        throw io_error(io_error::kind::parse, path + ": bad PNM dimensions");
    if (maxval != 255)
        throw io_error(io_error::kind::unsupported, path + ": only maxval 255 supported");
    ++c.pos; // single whitespace after maxval
    const size_t n = static_cast<size_t>(w) * h * channels;
    const uint8_t* p = c.bytes(n);
    Image img(w, h, channels);
    for (size_t i = 0; i < n; ++i) img.data[i] = p[i] / 255.0;
    return img;
}

// -------------------------------------------------------------- response map

void write_rnu_map(const NonUniformityMap& map, const std::string& path) {
    std::vector<uint8_t> buf;
    buf.insert(buf.end(), {'R', 'N', 'U', '1'});
    put_u32(buf, kRnuVersion);
    put_u32(buf, static_cast<uint32_t>(map.width));
    put_u32(buf, static_cast<uint32_t>(map.height));
    put_u32(buf, static_cast<uint32_t>(map.ref_x));
    put_u32(buf, static_cast<uint32_t>(map.ref_y));
    for (double v : map.r) put_f64(buf, v);
    buf.insert(buf.end(), map.dead.begin(), map.dead.end());
    write_file(path, buf.data(), buf.size());
}

NonUniformityMap read_rnu_map(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    Cursor c{buf.data(), buf.size(), 0, path};
    if (std::memcmp(c.bytes(4), "RNU1", 4) != 0)
        throw io_error(io_error::kind::bad_magic, path + ": not an RNU1 file");
    if (c.u32() != kRnuVersion)
        throw io_error(io_error::kind::version_mismatch, path + ": unsupported RNU version");
    NonUniformityMap m;
    m.width = static_cast<int>(c.u32());
    m.height = static_cast<int>(c.u32());
    m.ref_x = static_cast<int>(c.u32());
    m.ref_y = static_cast<int>(c.u32());
    if (m.width <= 0 || m.height <= 0)
        throw io_error(io_error::kind::parse, path + ": bad RNU dimensions");
    const size_t n = static_cast<size_t>(m.width) * m.height;
    m.r.resize(n);
    for (size_t i = 0; i < n; ++i) m.r[i] = c.f64();
    const uint8_t* d = c.bytes(n);
    m.dead.assign(d, d + n);
    return m;
}

// --------------------------------------------------------------- checkpoints

int checkpoint_param_stride(int channels, int sh_degree) {
    return 11 + channels * sh_basis_count(sh_degree);
}

namespace {

void flatten_gaussian(const Gaussian3D& g, double* out) {
    for (int i = 0; i < 3; ++i) out[i] = g.mean(i);
    for (int i = 0; i < 4; ++i) out[3 + i] = g.rot(i);
    for (int i = 0; i < 3; ++i) out[7 + i] = g.log_scale(i);
    out[10] = g.opacity_logit;
    int k = 11;
    for (int c = 0; c < g.sh.rows(); ++c)
        for (int b = 0; b < g.sh.cols(); ++b) out[k++] = g.sh(c, b);
}

Gaussian3D unflatten_gaussian(const double* in, int channels, int basis) {
    Gaussian3D g;
    for (int i = 0; i < 3; ++i) g.mean(i) = in[i];
    for (int i = 0; i < 4; ++i) g.rot(i) = in[3 + i];
    for (int i = 0; i < 3; ++i) g.log_scale(i) = in[7 + i];
    g.opacity_logit = in[10];
    g.sh.resize(channels, basis);
    int k = 11;
    for (int c = 0; c < channels; ++c)
        for (int b = 0; b < basis; ++b) g.sh(c, b) = in[k++];
    return g;
}

constexpr uint32_t kBlockMeta = 1;
constexpr uint32_t kBlockParamsF32 = 2;
constexpr uint32_t kBlockParamsF64 = 3;
constexpr uint32_t kBlockAdamF64 = 4;

} // namespace

void write_checkpoint(const CheckpointData& ckpt, const std::string& path) {
    const int stride = checkpoint_param_stride(ckpt.channels, ckpt.sh_degree);
    const size_t count = ckpt.gaussians.size();
    std::vector<double> flat(count * static_cast<size_t>(stride));
    for (size_t i = 0; i < count; ++i)
        flatten_gaussian(ckpt.gaussians[i], flat.data() + i * stride);

    std::vector<uint8_t> buf;
    buf.insert(buf.end(), {'S', 'S', 'C', 'K'});
    put_u32(buf, kCkptVersion);

    auto block = [&](uint32_t tag, const std::vector<uint8_t>& payload) {
        put_u32(buf, tag);
        put_u64(buf, payload.size());
        buf.insert(buf.end(), payload.begin(), payload.end());
    };

    {
        std::vector<uint8_t> meta;
        put_u64(meta, ckpt.iteration);
        put_u64(meta, ckpt.seed);
        put_u32(meta, static_cast<uint32_t>(ckpt.channels));
        put_u32(meta, static_cast<uint32_t>(ckpt.sh_degree));
        put_u32(meta, static_cast<uint32_t>(ckpt.window));
        put_f64(meta, ckpt.omega);
        put_u64(meta, ckpt.adam_step);
        block(kBlockMeta, meta);
    }
    {
        std::vector<uint8_t> p32;
        put_u64(p32, count);
        put_u32(p32, static_cast<uint32_t>(stride));
        for (double v : flat) put_f32(p32, static_cast<float>(v));
        block(kBlockParamsF32, p32);
    }
    {
        std::vector<uint8_t> p64;
        put_u64(p64, count);
        put_u32(p64, static_cast<uint32_t>(stride));
        for (double v : flat) put_f64(p64, v);
        block(kBlockParamsF64, p64);
    }
    if (!ckpt.adam_m.empty()) {
        std::vector<uint8_t> a;
        put_u64(a, ckpt.adam_m.size());
        for (double v : ckpt.adam_m) put_f64(a, v);
        for (double v : ckpt.adam_v) put_f64(a, v);
        block(kBlockAdamF64, a);
    }
    write_file(path, buf.data(), buf.size());
}

CheckpointData read_checkpoint(const std::string& path) {
    std::vector<uint8_t> buf = read_file(path);
    Cursor c{buf.data(), buf.size(), 0, path};
    if (std::memcmp(c.bytes(4), "SSCK", 4) != 0)
        throw io_error(io_error::kind::bad_magic, path + ": not a SSCK checkpoint");
    if (c.u32() != kCkptVersion)
        throw io_error(io_error::kind::version_mismatch,
                       path + ": unsupported checkpoint version");

    CheckpointData ckpt;
    bool meta_seen = false;
    std::vector<double> flat32, flat64;
    size_t count32 = 0, count64 = 0;
    int stride32 = 0, stride64 = 0;

    while (!c.done()) {
        uint32_t tag = c.u32();
        uint64_t len = c.u64();
        c.need(len);
        Cursor body{c.data + c.pos, static_cast<size_t>(len), 0, path};
        c.pos += len;
        switch (tag) {
        case kBlockMeta:
            ckpt.iteration = body.u64();
            ckpt.seed = body.u64();
            ckpt.channels = static_cast<int>(body.u32());
            ckpt.sh_degree = static_cast<int>(body.u32());
            ckpt.window = static_cast<int>(body.u32());
            ckpt.omega = body.f64();
            ckpt.adam_step = body.u64();
            meta_seen = true;
            break;
        case kBlockParamsF32: {
            count32 = body.u64();
            stride32 = static_cast<int>(body.u32());
            flat32.resize(count32 * static_cast<size_t>(stride32));
            for (double& v : flat32) v = body.f32();
            break;
        }
        case kBlockParamsF64: {
            count64 = body.u64();
            stride64 = static_cast<int>(body.u32());
            flat64.resize(count64 * static_cast<size_t>(stride64));
            for (double& v : flat64) v = body.f64();
            break;
        }
        case kBlockAdamF64: {
            uint64_t n = body.u64();
            ckpt.adam_m.resize(n);
            ckpt.adam_v.resize(n);
            for (double& v : ckpt.adam_m) v = body.f64();
            for (double& v : ckpt.adam_v) v = body.f64();
            break;
        }
        default: break; // unknown blocks are skipped
        }
    }
    if (!meta_seen)
        throw io_error(io_error::kind::parse, path + ": checkpoint lacks a meta block");

    const int basis = sh_basis_count(ckpt.sh_degree);
    const int stride = checkpoint_param_stride(ckpt.channels, ckpt.sh_degree);
    const std::vector<double>* flat = nullptr;
    size_t count = 0;
    if (!flat64.empty() || count64 > 0) {
        if (stride64 != stride)
            throw io_error(io_error::kind::parse, path + ": parameter stride mismatch");
        flat = &flat64;
        count = count64;
        ckpt.precise = true;
    } else if (!flat32.empty() || count32 > 0) {
        if (stride32 != stride)
            throw io_error(io_error::kind::parse, path + ": parameter stride mismatch");
        flat = &flat32;
        count = count32;
        ckpt.precise = false;
    } else {
        throw io_error(io_error::kind::parse, path + ": checkpoint lacks parameter blocks");
    }
    ckpt.gaussians.reserve(count);
    for (size_t i = 0; i < count; ++i)
        ckpt.gaussians.push_back(
            unflatten_gaussian(flat->data() + i * stride, ckpt.channels, basis));
    return ckpt;
}

} // namespace spikesplat::io
