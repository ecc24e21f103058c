#pragma once
// Samples, manifests, resizing, augmentation and the synthetic lesion set.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rmsd/image_io.hpp"
#include "rmsd/rng.hpp"
#include "rmsd/tensor.hpp"

namespace rmsd {

/// image (1,3,H,W) in [0,1]; mask (1,1,H,W) in {0,1}.
struct Sample {
    Tensorf image;
    Tensorf mask;
    std::string id;
};

Tensorf image_to_tensor(const Image8& img);
/// Binarised at 128; multi-channel masks use the channel mean.
Tensorf mask_to_tensor(const Image8& img);
/// Rounds [0,1] values to 8 bits; 3 channels become RGB, 1 becomes gray.
Image8 tensor_to_image(const Tensorf& t);

Sample load_sample(const std::filesystem::path& image_path, const std::filesystem::path& mask_path,
                   std::string id = {});

/// Catmull-Rom (a = -0.5) bicubic resampling with half-pixel centres and
/// edge-clamped taps. No antialiasing on downscale.
template <typename Scalar>
Tensor<Scalar> bicubic_resize(const Tensor<Scalar>& t, int out_h, int out_w);

/// Bicubic resize followed by re-binarisation at 0.5.
Tensorf resize_mask(const Tensorf& mask, int out_h, int out_w);

/// Nearest-neighbour resize (source index floor((o + 0.5) * in / out)).
Tensorf resize_nearest(const Tensorf& t, int out_h, int out_w);

enum class AugmentKind { Identity, HFlip, VFlip, Sharpen, Rotate };

struct AugmentOp {
    AugmentKind kind = AugmentKind::Identity;
    double degrees = 0.0;  // Rotate only, in [0, 90], counter-clockwise

    /// "orig", "hflip", "vflip", "sharpen", "rot"
    std::string suffix() const;
    /// Round-trippable text form, e.g. "rotate:37.25".
    std::string str() const;
    static AugmentOp parse(const std::string& s);
    friend bool operator==(const AugmentOp&, const AugmentOp&) = default;
};

/// Applies one geometric or photometric op. Geometry is shared by image and
/// mask (bilinear for the image, nearest for the mask, zero fill); sharpen
/// touches the image only.
Sample augment(const Sample& s, const AugmentOp& op);

/// Rotation by a uniformly drawn angle in [0, 90].
AugmentOp random_rotation(Rng& rng);

struct ManifestEntry {
    std::string id;
    std::filesystem::path image;
    std::filesystem::path mask;
    AugmentOp op;
    std::string source_id;  // id before expansion; equals id for originals
};

struct Manifest {
    std::filesystem::path root;
    std::string split = "train";
    std::vector<ManifestEntry> entries;

    std::size_t size() const { return entries.size(); }
};

class ManifestError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// CSV lines `id,image_path,mask_path[,op]`; an optional header line starting
/// with "id," is skipped. Relative paths resolve against the manifest's
/// directory. Ids must be unique.
Manifest read_manifest(const std::filesystem::path& path, std::string split = "train");
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Each entry contributes itself plus one flip (h or v, equally likely), one
/// sharpen and one rotation with a Uniform[0,90] angle. Draws for entry i
/// depend only on (seed, i).
Manifest expand_4x(const Manifest& m, std::uint64_t seed);

/// Loads an entry, resizes to `size` x `size` if given, then applies its op.
Sample materialize(const ManifestEntry& e, std::optional<int> size = std::nullopt);

/// Rotated ellipse; membership is tested at pixel centres (x, y) in pixel units.
struct Ellipse {
    double cx = 0, cy = 0;
    double rx = 1, ry = 1;
    double angle = 0;  // radians

    /// Squared normalised radius; < 1 inside.
    double radius2(double x, double y) const;
    bool contains(double x, double y) const { return radius2(x, y) < 1.0; }
};

struct SynthOptions {
    bool hair = true;
    double min_area = 0.02;
    double max_area = 0.60;
};

struct SynthItem {
    Sample sample;
    std::vector<Ellipse> lesions;
};

/// n lesion-like images of size x size: 1 or 2 soft-edged ellipses on a
/// textured background, optional dark hair strokes. Masks are the exact union
/// of ellipse interiors; pixel values are multiples of 1/255 so they survive a
/// PNG round trip unchanged.
std::vector<SynthItem> synth_dataset(int n, int size, std::uint64_t seed, const SynthOptions& opts = {});

/// Writes images/, masks/ and manifest.csv under dir; returns the manifest path.
std::filesystem::path write_synth(const std::filesystem::path& dir, const std::vector<SynthItem>& items);

}  // namespace rmsd
