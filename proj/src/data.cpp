#include "wproj/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "wproj/errors.hpp"

namespace wproj {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* field) {
    if (bytes.size() < offset + 4) {
        throw ParseError(std::string("IDX: truncated header while reading ") + field, bytes.size());
    }
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(splitmix64(seed)) {}

Rng Rng::split(std::string_view name) const { return Rng(splitmix64(seed_ ^ fnv1a(name))); }

double Rng::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::below(std::size_t n) {
    if (n == 0) throw ParameterError("Rng::below: empty range");
    // Rejection sampling keeps the draw unbiased.
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return static_cast<std::size_t>(v % n);
}

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kImageMagic) throw ParseError("IDX: bad image magic number", 0);
    IdxImages out;
    out.count = read_be32(bytes, 4, "image count");
    out.rows = read_be32(bytes, 8, "row count");
    out.cols = read_be32(bytes, 12, "column count");
    const std::size_t payload = out.count * out.rows * out.cols;
    if (bytes.size() < 16 + payload) throw ParseError("IDX: truncated image data", bytes.size());
    out.pixels.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(payload));
    return out;
}

std::vector<std::uint8_t> parse_idx_labels(std::span<const std::uint8_t> bytes) {
    const std::uint32_t magic = read_be32(bytes, 0, "magic");
    if (magic != kLabelMagic) throw ParseError("IDX: bad label magic number", 0);
    const std::size_t count = read_be32(bytes, 4, "label count");
    if (bytes.size() < 8 + count) throw ParseError("IDX: truncated label data", bytes.size());
    return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(count)};
}

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading " + path);
    return bytes;
}

void write_file(const std::string& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("error writing " + path);
}

IdxImages read_idx_images(const std::string& path) { return parse_idx_images(read_file(path)); }

std::vector<std::uint8_t> read_idx_labels(const std::string& path) { return parse_idx_labels(read_file(path)); }

std::vector<std::uint8_t> encode_idx_images(const IdxImages& images) {
    std::vector<std::uint8_t> out;
    out.reserve(16 + images.pixels.size());
    put_be32(out, kImageMagic);
    put_be32(out, static_cast<std::uint32_t>(images.count));
    put_be32(out, static_cast<std::uint32_t>(images.rows));
    put_be32(out, static_cast<std::uint32_t>(images.cols));
    out.insert(out.end(), images.pixels.begin(), images.pixels.end());
    return out;
}

std::vector<std::uint8_t> encode_idx_labels(std::span<const std::uint8_t> labels) {
    std::vector<std::uint8_t> out;
    put_be32(out, kLabelMagic);
    put_be32(out, static_cast<std::uint32_t>(labels.size()));
    out.insert(out.end(), labels.begin(), labels.end());
    return out;
}

Dataset make_dataset(const IdxImages& images, std::span<const std::uint8_t> labels) {
    if (images.count != labels.size()) {
        throw ParseError("IDX: " + std::to_string(images.count) + " images but " + std::to_string(labels.size()) +
                             " labels",
                         8);
    }
    Dataset data;
    data.shape = GridShape{1, images.rows, images.cols};
    const std::size_t n = images.rows * images.cols;
    std::size_t max_label = 0;
    for (std::size_t e = 0; e < images.count; ++e) {
        std::vector<double> values(n);
        for (std::size_t i = 0; i < n; ++i) values[i] = images.pixels[e * n + i] / 255.0;
        MassVector raw(data.shape, std::move(values));
        if (!(raw.total_mass() > 0.0)) {
            throw ParameterError("IDX: image " + std::to_string(e) + " is blank and cannot be normalized");
        }
        data.images.push_back(normalize_to_unit_mass(raw).first);
        data.labels.push_back(labels[e]);
        max_label = std::max<std::size_t>(max_label, labels[e]);
    }
    data.classes = images.count == 0 ? 0 : max_label + 1;
    return data;
}

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
    return make_dataset(read_idx_images(images_path), read_idx_labels(labels_path));
}

std::pair<IdxImages, std::vector<std::uint8_t>> to_idx(const Dataset& data) {
    IdxImages out;
    out.count = data.size();
    out.rows = data.shape.height;
    out.cols = data.shape.width;
    const std::size_t n = data.shape.pixels();
    out.pixels.reserve(out.count * n);
    std::vector<std::uint8_t> labels;
    for (std::size_t e = 0; e < data.size(); ++e) {
        auto px = data.images[e].channel(0);
        const double top = *std::max_element(px.begin(), px.end());
        for (double v : px) out.pixels.push_back(static_cast<std::uint8_t>(std::lround(255.0 * v / top)));
        labels.push_back(static_cast<std::uint8_t>(data.labels[e]));
    }
    return {std::move(out), std::move(labels)};
}

Dataset generate_blobs(std::size_t n, std::size_t grid, std::size_t classes, std::uint64_t seed) {
    if (grid < 2) throw ParameterError("generate_blobs: grid must be at least 2");
    if (classes < 1) throw ParameterError("generate_blobs: need at least one class");
    Dataset data;
    data.shape = GridShape{1, grid, grid};
    data.classes = classes;
    if (n == 0) return data;

    // Class spots evenly spaced on a circle around the grid center.
    const double mid = (static_cast<double>(grid) - 1.0) / 2.0;
    const double radius = classes == 1 ? 0.0 : 0.15 * static_cast<double>(grid);
    std::vector<std::pair<double, double>> spots(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
        spots[c] = {mid + radius * std::sin(angle), mid - radius * std::cos(angle)};
    }

    Rng rng = Rng(seed).split("blobs");
    const double width = 0.12 * static_cast<double>(grid);
    const double jitter = 0.05 * static_cast<double>(grid);
    for (std::size_t e = 0; e < n; ++e) {
        const std::size_t label = rng.below(classes);
        const double ci = spots[label].first + jitter * rng.normal();
        const double cj = spots[label].second + jitter * rng.normal();
        std::vector<double> values(grid * grid);
        for (std::size_t i = 0; i < grid; ++i) {
            for (std::size_t j = 0; j < grid; ++j) {
                const double di = static_cast<double>(i) - ci;
                const double dj = static_cast<double>(j) - cj;
                values[i * grid + j] = std::exp(-(di * di + dj * dj) / (2.0 * width * width)) + 0.02 * rng.uniform();
            }
        }
        data.images.push_back(normalize_to_unit_mass(MassVector(data.shape, std::move(values))).first);
        data.labels.push_back(label);
    }
    return data;
}

void write_pgm(const std::string& path, std::size_t height, std::size_t width, std::span<const double> values,
               double lo, double hi) {
    if (values.size() != height * width) throw ShapeError("write_pgm: value count does not match the image size");
    if (!(hi > lo)) throw ParameterError("write_pgm: empty value range");
    std::string header = "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    std::vector<std::uint8_t> bytes(header.begin(), header.end());
    for (double v : values) {
        const double scaled = std::clamp(255.0 * (v - lo) / (hi - lo), 0.0, 255.0);
        bytes.push_back(static_cast<std::uint8_t>(std::lround(scaled)));
    }
    write_file(path, bytes);
}

Graymap read_pgm(const std::string& path) {
    const auto bytes = read_file(path);
    std::size_t pos = 0;
    auto next_token = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) tok.push_back(static_cast<char>(bytes[pos++]));
        if (tok.empty()) throw ParseError("PGM: truncated header", pos);
        return tok;
    };
    if (next_token() != "P5") throw ParseError("PGM: only binary P5 graymaps are supported", 0);
    Graymap g;
    try {
        g.width = std::stoul(next_token());
        g.height = std::stoul(next_token());
        if (std::stoul(next_token()) != 255) throw ParseError("PGM: only maxval 255 is supported", pos);
    } catch (const std::logic_error&) {
        throw ParseError("PGM: malformed header", pos);
    }
    ++pos;  // single whitespace after maxval
    if (bytes.size() < pos + g.width * g.height) throw ParseError("PGM: truncated pixel data", bytes.size());
    g.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + g.width * g.height));
    return g;
}

}  // namespace wproj
