#pragma once
// 8-bit raster I/O: PNG via libpng, binary and ASCII PPM/PGM.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace rmsd {

class ImageError : public std::runtime_error {
public:
    enum class Code { Io, Decode, Unsupported, SizeMismatch };
    ImageError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const { return code_; }

private:
    Code code_;
};

/// Interleaved 8-bit pixels, row-major, 1 (gray) or 3 (RGB) channels.
struct Image8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t& at(int y, int x, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

/// Format is chosen by content (PNG signature or P2/P3/P5/P6 header), not by
/// extension. PNG alpha is composited onto black; 16-bit PNGs are reduced to 8.
Image8 read_image(const std::filesystem::path& path);

/// Writes gray or RGB PNG. Output bytes depend only on the pixels.
void write_png(const std::filesystem::path& path, const Image8& image);

}  // namespace rmsd
