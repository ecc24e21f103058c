#include "rmsd/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rmsd {
namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(ImageError::Code::Io, "cannot open image " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Image8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
        throw ImageError(ImageError::Code::Decode, name + ": " + img.message);
    const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    Image8 out;
    out.width = static_cast<int>(img.width);
    out.height = static_cast<int>(img.height);
    out.channels = color ? 3 : 1;
    out.pixels.resize(PNG_IMAGE_SIZE(img));
    png_color black{0, 0, 0};
    if (!png_image_finish_read(&img, &black, out.pixels.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw ImageError(ImageError::Code::Decode, name + ": " + msg);
    }
    return out;
}

// Netpbm: header tokens separated by whitespace, '#' comments to end of line.
class PnmReader {
public:
    PnmReader(const std::vector<std::uint8_t>& b, std::string name) : b_(b), name_(std::move(name)) {}

    int number() {
        skip_space();
        if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) fail("expected a number");
        long v = 0;
        while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
            v = v * 10 + (b_[pos_++] - '0');
            if (v > (1 << 24)) fail("number out of range");
        }
        return static_cast<int>(v);
    }

    Image8 read() {
        if (b_.size() < 2 || b_[0] != 'P') fail("not a netpbm file");
        const char kind = static_cast<char>(b_[1]);
        if (kind != '2' && kind != '3' && kind != '5' && kind != '6')
            throw ImageError(ImageError::Code::Unsupported, name_ + ": only P2, P3, P5 and P6 are supported");
        pos_ = 2;
        Image8 img;
        img.channels = (kind == '3' || kind == '6') ? 3 : 1;
        img.width = number();
        img.height = number();
        const int maxval = number();
        if (img.width < 1 || img.height < 1) fail("empty image");
        if (maxval != 255) throw ImageError(ImageError::Code::Unsupported, name_ + ": only 8-bit (maxval 255) supported");
        const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
        img.pixels.resize(n);
        if (kind == '5' || kind == '6') {
            ++pos_;  // single whitespace byte after maxval
            if (b_.size() - std::min(pos_, b_.size()) < n) fail("truncated pixel data");
            std::memcpy(img.pixels.data(), b_.data() + pos_, n);
        } else {
            for (auto& p : img.pixels) {
                const int v = number();
                if (v > 255) fail("sample exceeds maxval");
                p = static_cast<std::uint8_t>(v);
            }
        }
        return img;
    }

private:
    void skip_space() {
        while (pos_ < b_.size()) {
            if (b_[pos_] == '#') {
                while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
            } else if (std::isspace(b_[pos_])) {
                ++pos_;
            } else {
                break;
            }
        }
    }
    [[noreturn]] void fail(const std::string& why) const { throw ImageError(ImageError::Code::Decode, name_ + ": " + why); }

    const std::vector<std::uint8_t>& b_;
    std::string name_;
    std::size_t pos_ = 0;
};

}  // namespace

Image8 read_image(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() >= 8 && std::memcmp(bytes.data(), sig, 8) == 0) return decode_png(bytes, path.string());
    if (bytes.size() >= 2 && bytes[0] == 'P') return PnmReader(bytes, path.string()).read();
    throw ImageError(ImageError::Code::Unsupported, path.string() + ": not a PNG, PPM or PGM file");
}

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3)
        throw ImageError(ImageError::Code::Unsupported, "write_png: channels must be 1 or 3");
    if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height * image.channels || image.width < 1 ||
        image.height < 1)
        throw ImageError(ImageError::Code::SizeMismatch, "write_png: pixel buffer does not match dimensions");
    png_image img;
    std::memset(&img, 0, sizeof img);
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(image.width);
    img.height = static_cast<png_uint_32>(image.height);
    img.format = image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, image.pixels.data(), 0, nullptr))
        throw ImageError(ImageError::Code::Io, "cannot write " + path.string() + ": " + img.message);
}

}  // namespace rmsd
