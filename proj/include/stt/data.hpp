#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "stt/common.hpp"
#include "stt/rng.hpp"
#include "stt/tensor.hpp"

namespace stt {

/// Everything needed to synthesize one domain of tracklets. Two specs with
/// the same fields and seed produce byte-identical datasets.
struct DomainSpec {
    std::string domain_id = "A";
    std::size_t num_identities = 32;
    std::size_t tracklets_per_id = 4;
    std::size_t frames_per_tracklet = 16;
    std::size_t image_h = 48;
    std::size_t image_w = 24;
    std::size_t channels = 3;
    std::size_t num_cameras = 4;
    std::vector<std::array<double, 3>> camera_bg;    // base background color per camera
    std::vector<std::array<double, 3>> camera_tint;  // multiplicative illumination per camera
    double jitter_px = 2.0;       // detection-box error amplitude
    double occlusion_prob = 0.15; // per-frame chance of an opaque bar over the figure
    double distractor_prob = 0.15;
    std::uint64_t seed = 1;

    void validate() const;
    std::string to_json() const;
    static DomainSpec from_json(const std::string& text);
};

/// One camera-consistent sequence of boxes of one person. Pixels are stored
/// quantized (u8) so the on-disk form is exactly the in-memory form.
struct Tracklet {
    std::size_t identity = 0;
    std::size_t camera = 0;
    std::size_t h = 0, w = 0, c = 0;
    std::vector<std::uint8_t> pixels;      // length * h * w * c, row-major
    std::vector<std::uint8_t> occluded;    // one flag per frame
    std::vector<std::uint8_t> distractor;  // one flag per frame

    std::size_t length() const { return occluded.size(); }
    Tensor frame(std::size_t t) const;  // [h, w, c] doubles in [0, 1]
    std::vector<Tensor> frames(const std::vector<std::size_t>& idx) const;
};

/// Rendering parameters of one synthetic person.
struct IdentityAppearance {
    std::array<double, 3> head_color{};
    std::array<double, 3> torso_color{};
    std::array<double, 3> leg_color{};
    double torso_width = 0.5;   // fraction of box width
    double torso_height = 0.34; // fraction of box height
    double head_radius = 0.10;  // fraction of box height
    double bob_speed = 0.5;     // vertical bob cycles per frame step
};

struct Dataset {
    DomainSpec spec;
    std::vector<Tracklet> train;    // identities [0, num_train_ids)
    std::vector<Tracklet> query;    // held-out identities, one tracklet each
    std::vector<Tracklet> gallery;  // remaining held-out tracklets
    std::size_t num_train_ids = 0;
};

/// Renders the full domain and splits it: first half of the identities train,
/// second half test; per test identity tracklet 0 is the query and the rest
/// gallery. Cameras rotate round-robin over tracklets so every query has a
/// same-identity gallery mate under a different camera.
Dataset generate_domain(const DomainSpec& spec);

/// Draws appearances whose concatenated colors keep a minimum pairwise
/// distance, so identities stay separable by design.
std::vector<IdentityAppearance> draw_appearances(std::size_t count, Rng& rng);

/// Splits [0, length) into n equal contiguous chunks and picks one frame per
/// chunk: uniformly when rng is given (training), the chunk center otherwise
/// (evaluation). Tracklets shorter than n repeat cyclically in order.
std::vector<std::size_t> restricted_sample(std::size_t length, std::size_t n, Rng* rng = nullptr);

/// One epoch of batches over train tracklets: each batch holds K tracklet
/// indices for each of P distinct identities, and the epoch visits every
/// identity at least once.
std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<Tracklet>& train,
                                                       std::size_t p_ids, std::size_t k_tracklets,
                                                       Rng& rng);

/// Directory layout: manifest.json plus one STTK binary per tracklet.
void save_dataset(const Dataset& d, const std::string& dir);
Dataset load_dataset(const std::string& dir);

/// Reads one STTK tracklet binary on its own. Identity, camera, and the
/// per-frame flags live in the dataset manifest, so they come back zeroed.
Tracklet load_tracklet_file(const std::string& path);

/// Stock domains: A and B are downstream stand-ins with disjoint looks, C is
/// the larger pre-training domain with harsher jitter and occlusion.
DomainSpec preset_domain(const std::string& name);

}  // namespace stt
