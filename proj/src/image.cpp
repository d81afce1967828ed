#include "protovit/image.hpp"

#include <fstream>

#include "protovit/check.hpp"

namespace protovit {

namespace {

// Reads one whitespace-delimited token, skipping '#' comments.
std::string next_token(std::istream &in) {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
        if (ch == '#') {
            while ((ch = in.get()) != EOF && ch != '\n') {
            }
            continue;
        }
        if (std::isspace(ch)) {
            if (!tok.empty()) return tok;
            continue;
        }
        tok.push_back(static_cast<char>(ch));
    }
    return tok;
}

}  // namespace

ByteImage read_ppm(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    PV_CHECK(in.good(), "cannot open image file: ", path);
    PV_CHECK(next_token(in) == "P6", "not a binary PPM (P6): ", path);
    ByteImage img;
    img.channels = 3;
    try {
        img.width = std::stoul(next_token(in));
        img.height = std::stoul(next_token(in));
        std::size_t maxval = std::stoul(next_token(in));
        PV_CHECK(maxval == 255, "unsupported PPM maxval in ", path);
    } catch (const std::invalid_argument &) {
        raise("corrupt PPM header: ", path);
    }
    std::vector<std::uint8_t> raw(img.width * img.height * 3);
    in.read(reinterpret_cast<char *>(raw.data()), static_cast<std::streamsize>(raw.size()));
    PV_CHECK(static_cast<std::size_t>(in.gcount()) == raw.size(), "truncated PPM data: ", path);
    img.data.resize(raw.size());
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < img.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.data[(c * img.height + y) * img.width + x] = raw[(y * img.width + x) * 3 + c];
    return img;
}

void write_ppm(const std::string &path, const ByteImage &image) {
    PV_CHECK(image.channels == 3, "PPM writer expects 3 channels");
    std::ofstream out(path, std::ios::binary);
    PV_CHECK(out.good(), "cannot write image file: ", path);
    out << "P6\n" << image.width << " " << image.height << "\n255\n";
    std::vector<std::uint8_t> raw(image.width * image.height * 3);
    for (std::size_t y = 0; y < image.height; ++y)
        for (std::size_t x = 0; x < image.width; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                raw[(y * image.width + x) * 3 + c] = image.at(c, y, x);
    out.write(reinterpret_cast<const char *>(raw.data()),
              static_cast<std::streamsize>(raw.size()));
    PV_CHECK(out.good(), "failed writing image file: ", path);
}

}  // namespace protovit
