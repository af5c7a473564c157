#pragma once

// File formats: BMP/PNG frames, sequence directories, results CSV, plot
// data, attention grids and the MPLT1 binary checkpoint.
//
// Checkpoint layout (little-endian):
//   "MPLT1" | version u32 | tensor count u32 |
//   per tensor: name length u32, UTF-8 name, rank u32, dims u64 × rank,
//               float64 × prod(dims)
// The configuration snapshot travels next to the checkpoint as
// `<path>.config` in the `key = value` format.

#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mplt/box.hpp"
#include "mplt/config.hpp"
#include "mplt/image.hpp"
#include "mplt/model.hpp"
#include "mplt/synth.hpp"

namespace mplt {

namespace fs = std::filesystem;

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct CheckpointFormatError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
    using CheckpointError::CheckpointError;
};
struct CheckpointShapeError : CheckpointError {
    using CheckpointError::CheckpointError;
};

// ---------------------------------------------------------------- images --

namespace detail {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
    b.push_back(static_cast<std::uint8_t>(v));
    b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline std::uint32_t get_u32(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}
inline std::uint16_t get_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | p[1] << 8);
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// 24-bit uncompressed bottom-up BMP.
inline void write_bmp(const fs::path& path, const ImageU8& img) {
    if (img.channels != 3) throw IoError("write_bmp: expected 3 channels");
    const std::size_t row = (img.width * 3 + 3) & ~std::size_t{3};
    const auto data_size = static_cast<std::uint32_t>(row * img.height);
    std::vector<std::uint8_t> b;
    b.reserve(54 + data_size);
    b.push_back('B');
    b.push_back('M');
    detail::put_u32(b, 54 + data_size);
    detail::put_u32(b, 0);
    detail::put_u32(b, 54);
    detail::put_u32(b, 40);
    detail::put_u32(b, static_cast<std::uint32_t>(img.width));
    detail::put_u32(b, static_cast<std::uint32_t>(img.height));
    detail::put_u16(b, 1);
    detail::put_u16(b, 24);
    detail::put_u32(b, 0);
    detail::put_u32(b, data_size);
    detail::put_u32(b, 2835);
    detail::put_u32(b, 2835);
    detail::put_u32(b, 0);
    detail::put_u32(b, 0);
    for (std::size_t y = img.height; y-- > 0;) {
        for (std::size_t x = 0; x < img.width; ++x) {
            b.push_back(img.at(y, x, 2));
            b.push_back(img.at(y, x, 1));
            b.push_back(img.at(y, x, 0));
        }
        for (std::size_t p = img.width * 3; p < row; ++p) b.push_back(0);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
}

/// Uncompressed 24/32-bit BMP, either row order.
inline ImageU8 read_bmp(const fs::path& path) {
    const auto b = detail::read_bytes(path);
    if (b.size() < 54 || b[0] != 'B' || b[1] != 'M') throw IoError(path.string() + ": not a BMP file");
    const std::uint32_t offset = detail::get_u32(&b[10]);
    const auto width = static_cast<std::int32_t>(detail::get_u32(&b[18]));
    const auto height = static_cast<std::int32_t>(detail::get_u32(&b[22]));
    const std::uint16_t bpp = detail::get_u16(&b[28]);
    const std::uint32_t compression = detail::get_u32(&b[30]);
    if ((bpp != 24 && bpp != 32) || (compression != 0 && compression != 3) || width <= 0 || height == 0)
        throw IoError(path.string() + ": unsupported BMP variant (need uncompressed 24/32-bit)");
    const bool bottom_up = height > 0;
    const std::size_t w = static_cast<std::size_t>(width), h = static_cast<std::size_t>(bottom_up ? height : -height);
    const std::size_t bytes = bpp / 8;
    const std::size_t row = (w * bytes + 3) & ~std::size_t{3};
    if (b.size() < offset + row * h) throw IoError(path.string() + ": truncated BMP");
    ImageU8 img(h, w, 3);
    for (std::size_t r = 0; r < h; ++r) {
        const std::size_t y = bottom_up ? h - 1 - r : r;
        const std::uint8_t* src = b.data() + offset + r * row;
        for (std::size_t x = 0; x < w; ++x) {
            img.at(y, x, 0) = src[x * bytes + 2];
            img.at(y, x, 1) = src[x * bytes + 1];
            img.at(y, x, 2) = src[x * bytes + 0];
        }
    }
    return img;
}

/// 8-bit PNG of any colour type, converted to RGB.
inline ImageU8 read_png(const fs::path& path) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw IoError(path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    ImageU8 img(image.height, image.width, 3);
    if (!png_image_finish_read(&image, nullptr, img.data.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw IoError(path.string() + ": " + msg);
    }
    return img;
}

inline ImageU8 read_image(const fs::path& path) {
    auto ext = path.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (ext == ".bmp") return read_bmp(path);
    if (ext == ".png") return read_png(path);
    throw IoError(path.string() + ": unsupported image format (expected .bmp or .png)");
}

// -------------------------------------------------------------- sequences --

namespace detail {

inline std::vector<fs::path> image_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        auto ext = e.path().extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
        if (ext == ".bmp" || ext == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    return files;
}

inline std::string format_exact(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace detail

/// Parses `x,y,w,h` lines (commas, tabs or spaces). Blank lines are skipped.
inline std::vector<BBox> parse_ground_truth(const std::string& text) {
    std::vector<BBox> boxes;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        for (auto& ch : line)
            if (ch == ',' || ch == '\t') ch = ' ';
        std::istringstream fields(line);
        BBox b;
        std::string rest;
        if (!(fields >> b.x >> b.y >> b.w >> b.h) || (fields >> rest))
            throw IoError("groundtruth line " + std::to_string(line_no) + ": expected x,y,w,h");
        boxes.push_back(b);
    }
    return boxes;
}

/// Reads `visible/`, `infrared/` and `groundtruth.txt`; frames pair by
/// sorted filename. An optional `tags.txt` holds per-frame attribute tags.
inline SequenceRecord load_sequence(const fs::path& dir) {
    const fs::path visible = dir / "visible", infrared = dir / "infrared", gt = dir / "groundtruth.txt";
    if (!fs::is_directory(visible)) throw IoError(dir.string() + ": missing visible/ folder");
    if (!fs::is_directory(infrared)) throw IoError(dir.string() + ": missing infrared/ folder");
    if (!fs::is_regular_file(gt)) throw IoError(dir.string() + ": missing groundtruth.txt");
    const auto rgb_files = detail::image_files(visible);
    const auto tir_files = detail::image_files(infrared);
    if (rgb_files.size() != tir_files.size())
        throw IoError(dir.string() + ": " + std::to_string(rgb_files.size()) + " visible frames vs " +
                      std::to_string(tir_files.size()) + " infrared frames");
    SequenceRecord seq;
    seq.name = dir.filename().string();
    if (seq.name.empty()) seq.name = dir.parent_path().filename().string();
    const auto gt_bytes = detail::read_bytes(gt);
    seq.ground_truth = parse_ground_truth(std::string(gt_bytes.begin(), gt_bytes.end()));
    if (seq.ground_truth.size() != rgb_files.size())
        throw IoError(dir.string() + ": " + std::to_string(seq.ground_truth.size()) + " ground-truth boxes vs " +
                      std::to_string(rgb_files.size()) + " frames");
    for (std::size_t i = 0; i < rgb_files.size(); ++i) {
        seq.rgb.push_back(read_image(rgb_files[i]));
        seq.tir.push_back(read_image(tir_files[i]));
    }
    seq.frame_tags.assign(seq.size(), "");
    if (fs::is_regular_file(dir / "tags.txt")) {
        std::ifstream in(dir / "tags.txt");
        std::string line;
        for (std::size_t i = 0; i < seq.size() && std::getline(in, line); ++i) seq.frame_tags[i] = line;
    }
    seq.validate();
    return seq;
}

/// Writes the directory layout read by load_sequence (BMP frames, exact
/// ground-truth decimals).
inline void write_sequence(const fs::path& dir, const SequenceRecord& seq) {
    seq.validate();
    fs::create_directories(dir / "visible");
    fs::create_directories(dir / "infrared");
    std::ofstream gt(dir / "groundtruth.txt");
    std::ofstream tags(dir / "tags.txt");
    if (!gt || !tags) throw IoError("cannot write sequence files under " + dir.string());
    for (std::size_t i = 0; i < seq.size(); ++i) {
        char name[32];
        std::snprintf(name, sizeof name, "%06zu.bmp", i + 1);
        write_bmp(dir / "visible" / name, seq.rgb[i]);
        write_bmp(dir / "infrared" / name, seq.tir[i]);
        const auto& b = seq.ground_truth[i];
        gt << detail::format_exact(b.x) << ',' << detail::format_exact(b.y) << ',' << detail::format_exact(b.w) << ','
           << detail::format_exact(b.h) << '\n';
        tags << (i < seq.frame_tags.size() ? seq.frame_tags[i] : "") << '\n';
    }
}

// ---------------------------------------------------------------- results --

/// One `x,y,w,h,confidence` line per frame, 6 decimals.
inline void write_results(const std::vector<BBox>& boxes, const fs::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write results to " + path.string());
    char buf[160];
    for (const auto& b : boxes) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.6f\n", b.x, b.y, b.w, b.h, b.confidence);
        out << buf;
    }
    if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<BBox> read_results(const fs::path& path) {
    const auto bytes = detail::read_bytes(path);
    std::istringstream in(std::string(bytes.begin(), bytes.end()));
    std::vector<BBox> boxes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        BBox b;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w, &b.h, &b.confidence) < 4)
            throw IoError(path.string() + " line " + std::to_string(line_no) + ": expected x,y,w,h,confidence");
        boxes.push_back(b);
    }
    return boxes;
}

/// `threshold,value` pairs, one per line.
inline void write_curve(const fs::path& path, const std::vector<double>& thresholds, const std::vector<double>& values) {
    if (thresholds.size() != values.size()) throw std::invalid_argument("write_curve: length mismatch");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    char buf[80];
    for (std::size_t i = 0; i < values.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f\n", thresholds[i], values[i]);
        out << buf;
    }
}

/// Row-major grid, comma-separated columns.
inline void write_grid(const fs::path& path, const std::vector<double>& grid, std::size_t rows, std::size_t cols) {
    if (grid.size() != rows * cols) throw std::invalid_argument("write_grid: size mismatch");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out << (c ? "," : "") << detail::format_exact(grid[r * cols + c]);
        out << '\n';
    }
}

// ------------------------------------------------------------- checkpoint --

inline constexpr char kCheckpointMagic[5] = {'M', 'P', 'L', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class ByteReader {
public:
    explicit ByteReader(const std::vector<std::uint8_t>& b) : b_(b) {}
    const std::uint8_t* take(std::size_t n, const char* what) {
        if (pos_ + n > b_.size())
            throw CheckpointTruncatedError(std::string("checkpoint truncated while reading ") + what);
        const auto* p = b_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::uint32_t u32(const char* what) { return get_u32(take(4, what)); }
    std::uint64_t u64(const char* what) {
        const auto* p = take(8, what);
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = v << 8 | p[i];
        return v;
    }
    bool done() const { return pos_ == b_.size(); }

private:
    const std::vector<std::uint8_t>& b_;
    std::size_t pos_ = 0;
};

}  // namespace detail

struct NamedTensor {
    std::string name;
    Shape shape;
    std::vector<double> values;
};

inline std::vector<std::uint8_t> encode_checkpoint(const std::vector<NamedTensor>& tensors) {
    std::vector<std::uint8_t> b(kCheckpointMagic, kCheckpointMagic + 5);
    detail::put_u32(b, kCheckpointVersion);
    detail::put_u32(b, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& t : tensors) {
        detail::put_u32(b, static_cast<std::uint32_t>(t.name.size()));
        b.insert(b.end(), t.name.begin(), t.name.end());
        detail::put_u32(b, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) detail::put_u64(b, d);
        for (double v : t.values) detail::put_u64(b, std::bit_cast<std::uint64_t>(v));
    }
    return b;
}

inline std::vector<NamedTensor> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kCheckpointMagic, 5) != 0)
        throw CheckpointFormatError("not an MPLT1 checkpoint (bad magic)");
    detail::ByteReader r(bytes);
    r.take(5, "magic");
    const auto version = r.u32("version");
    if (version != kCheckpointVersion)
        throw CheckpointFormatError("unsupported checkpoint version " + std::to_string(version));
    const auto count = r.u32("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        const auto len = r.u32("name length");
        const auto* p = r.take(len, "name");
        t.name.assign(reinterpret_cast<const char*>(p), len);
        const auto rank = r.u32("rank");
        for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(static_cast<std::size_t>(r.u64("dims")));
        const std::size_t n = numel(t.shape);
        t.values.resize(n);
        for (std::size_t k = 0; k < n; ++k) t.values[k] = std::bit_cast<double>(r.u64("values"));
        out.push_back(std::move(t));
    }
    if (!r.done()) throw CheckpointFormatError("trailing bytes after last tensor");
    return out;
}

template <typename Real>
void save_checkpoint(const Model<Real>& model, const RunConfig& run, const fs::path& path) {
    std::vector<NamedTensor> tensors;
    for (const auto& p : model.parameters())
        tensors.push_back({p.name, p.value.shape(), {p.value.data().begin(), p.value.data().end()}});
    const auto bytes = encode_checkpoint(tensors);
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw IoError("cannot write checkpoint " + path.string());
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    }
    RunConfig snapshot = run;
    snapshot.model = model.config();
    std::ofstream cfg(path.string() + ".config");
    cfg << serialize_config(snapshot);
}

template <typename Real>
void save_checkpoint(const Model<Real>& model, const fs::path& path) {
    save_checkpoint(model, RunConfig{}, path);
}

/// Builds a model for `config` and fills it from the checkpoint; every tensor
/// must be present with the configured shape.
template <typename Real = double>
Model<Real> load_checkpoint(const fs::path& path, const ModelConfig& config) {
    const auto tensors = decode_checkpoint(detail::read_bytes(path));
    auto model = Model<Real>::create(config, 0);
    std::map<std::string, const NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    if (by_name.size() != tensors.size()) throw CheckpointFormatError("duplicate tensor names in checkpoint");
    for (auto& p : model.parameters()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end()) throw CheckpointShapeError("checkpoint lacks tensor " + p.name);
        if (it->second->shape != p.value.shape())
            throw CheckpointShapeError("tensor " + p.name + ": checkpoint shape " + shape_str(it->second->shape) +
                                       " vs configured " + shape_str(p.value.shape()));
        auto dst = p.value.mutable_data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(it->second->values[i]);
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw CheckpointShapeError("checkpoint has tensor " + by_name.begin()->first + " unknown to this configuration");
    return model;
}

/// Loads with the configuration snapshot stored beside the checkpoint.
template <typename Real = double>
Model<Real> load_checkpoint(const fs::path& path) {
    return load_checkpoint<Real>(path, load_config(path.string() + ".config").model);
}

}  // namespace mplt
