#include "hess/image_io.hpp"

#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>

namespace hess {

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string header_token(std::istream& in) {
    std::string token;
    while (in) {
        const int c = in.get();
        if (c == EOF) break;
        if (c == '#') {
            std::string ignored;
            std::getline(in, ignored);
            continue;
        }
        if (std::isspace(c)) {
            if (!token.empty()) break;
            continue;
        }
        token.push_back(static_cast<char>(c));
    }
    return token;
}

}  // namespace

GrayImage read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    if (header_token(in) != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5)");
    GrayImage img;
    try {
        img.width = std::stoul(header_token(in));
        img.height = std::stoul(header_token(in));
        if (std::stoul(header_token(in)) != 255) throw std::runtime_error("maxval");
    } catch (const std::exception&) {
        throw std::runtime_error(path.string() + ": malformed PGM header (8-bit P5 expected)");
    }
    img.pixels.resize(img.width * img.height);
    in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
    if (!in) throw std::runtime_error(path.string() + ": truncated PGM data");
    return img;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

const std::array<std::array<std::uint8_t, 3>, 19>& label_palette() {
    static const std::array<std::array<std::uint8_t, 3>, 19> palette{{
        {128, 64, 128}, {244, 35, 232}, {70, 70, 70},   {102, 102, 156}, {190, 153, 153},
        {153, 153, 153}, {250, 170, 30}, {220, 220, 0}, {107, 142, 35},  {152, 251, 152},
        {70, 130, 180},  {220, 20, 60},  {255, 0, 0},   {0, 0, 142},     {0, 0, 70},
        {0, 60, 100},    {0, 80, 100},   {0, 0, 230},   {119, 11, 32},
    }};
    return palette;
}

void write_label_ppm(const GrayImage& labels, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << labels.width << ' ' << labels.height << "\n255\n";
    const auto& palette = label_palette();
    std::vector<std::uint8_t> rgb;
    rgb.reserve(labels.pixels.size() * 3);
    for (auto label : labels.pixels) {
        if (label == 255) {
            rgb.insert(rgb.end(), {0, 0, 0});
        } else {
            const auto& c = palette[label % palette.size()];
            rgb.insert(rgb.end(), c.begin(), c.end());
        }
    }
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace hess
