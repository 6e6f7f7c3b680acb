#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "usct/grid.hpp"
#include "usct/types.hpp"

namespace usct {

/// Weights of the deformation energy. The total reads
///   lambda_photo * photo
/// + lambda_reg * ((1 - fold_weight) * smooth + fold_weight * fold)
/// + lambda_flow * flow.
struct EnergyWeights {
    double lambda_flow = 1.0;
    double lambda_photo = 0.2;
    double lambda_reg = 0.05;
    double charbonnier_eps = 1e-3;
    double edge_kappa = 10.0;
    double fold_weight = 0.5;  // share of lambda_reg given to the folding penalty

    void validate() const;
};

struct PyramidSpec {
    int levels = 4;
    int scale_factor = 2;  // fixed
    double blur_sigma = 1.0;

    void validate() const;
};

/// Per-pixel descriptor map; descriptors are zero-mean, unit-norm patches of
/// intensity and gradient magnitude (all-zero in flat regions).
class FeatureMap {
  public:
    FeatureMap() = default;
    FeatureMap(int width, int height, int channels, std::vector<double> data);

    int width() const { return w_; }
    int height() const { return h_; }
    int channels() const { return c_; }
    const double* at(int x, int y) const { return data_.data() + (static_cast<std::size_t>(y) * w_ + x) * c_; }
    const std::vector<double>& data() const { return data_; }

    template <typename G>
    bool same_shape(const G& other) const {
        return w_ == other.width() && h_ == other.height();
    }

  private:
    int w_ = 0, h_ = 0, c_ = 0;
    std::vector<double> data_;
};

/// Local matching scores over displacements within [-radius, radius]^2.
class CorrelationVolume {
  public:
    CorrelationVolume() = default;
    CorrelationVolume(int width, int height, int radius, std::vector<double> scores);

    int width() const { return w_; }
    int height() const { return h_; }
    int radius() const { return r_; }
    int window() const { return 2 * r_ + 1; }
    double score(int x, int y, int dx, int dy) const {
        const int n = window();
        return scores_[(static_cast<std::size_t>(y) * w_ + x) * n * n +
                       static_cast<std::size_t>(dy + r_) * n + (dx + r_)];
    }
    const std::vector<double>& scores() const { return scores_; }

  private:
    int w_ = 0, h_ = 0, r_ = 0;
    std::vector<double> scores_;
};

struct EnergyTerms {
    double total = 0.0;
    double photo = 0.0;
    double smooth = 0.0;
    double fold = 0.0;
    double flow = 0.0;
};

/// Level 0 is the input; each next level is a Gaussian blur followed by 2x
/// decimation aligned to grid centers. Throws if the coarsest level would drop
/// below 8x8.
std::vector<Image2D> build_pyramid(const Image2D& img, const PyramidSpec& spec);

/// Patch descriptors over [I, |grad I|]; channels = 2*(2*patch_radius+1)^2.
FeatureMap extract_features(const Image2D& img, int patch_radius = 3);

/// scores(x, d) = <f0(x), f1(x+d)> / sqrt(C), border-clamped lookups.
CorrelationVolume correlation_volume(const FeatureMap& f0, const FeatureMap& f1, int radius = 4);

/// Argmax displacement per pixel with separable parabolic sub-pixel refinement
/// (clamped to +-0.5 px). Ties break toward smaller |d|, then lexicographic.
FlowField coarse_match(const CorrelationVolume& cv);

/// Variational energy of a candidate field; pseudo (optional) adds an L1
/// distillation term.
EnergyTerms energy(const Image2D& i0, const Image2D& i1, const FlowField& f, const ConfidenceMap& conf,
                   const EnergyWeights& w, const FlowField* pseudo = nullptr);

/// First-order descent with analytic gradients; the photometric term is
/// linearized around three outer warps. Returns the iterate with the lowest
/// recorded total energy (never worse than f_init).
FlowField refine_variational(const Image2D& i0, const Image2D& i1, const FlowField& f_init,
                             const ConfidenceMap& conf, const EnergyWeights& w,
                             const FlowField* pseudo, int iters, double step);

/// Coarse-to-fine bidirectional estimation. F01 warps i1 toward i0 and is
/// weighted by conf0; F10 the reverse. Optional pseudo labels are full-resolution
/// fields distilled into every level.
std::pair<FlowField, FlowField> estimate_bidirectional(const Image2D& i0, const Image2D& i1,
                                                       const ConfidenceMap& conf0, const ConfidenceMap& conf1,
                                                       const PyramidSpec& spec, const EnergyWeights& w,
                                                       const FlowField* pseudo01 = nullptr,
                                                       const FlowField* pseudo10 = nullptr);

/// Two-leg candidate through an intermediate frame: estimate(i0->imid) composed
/// with estimate(imid->i1). Returns the F01-direction field.
FlowField bisect_candidate(const Image2D& i0, const Image2D& imid, const Image2D& i1,
                           const ConfidenceMap& conf0, const ConfidenceMap& confmid, const ConfidenceMap& conf1,
                           const PyramidSpec& spec, const EnergyWeights& w);

/// Both directions of the bisect composition, estimating each leg pair once.
std::pair<FlowField, FlowField> bisect_pair(const Image2D& i0, const Image2D& imid, const Image2D& i1,
                                            const ConfidenceMap& conf0, const ConfidenceMap& confmid,
                                            const ConfidenceMap& conf1, const PyramidSpec& spec,
                                            const EnergyWeights& w);

/// Picks the candidate with the lowest mean |warp(i1,F) - i0| over its valid
/// (unclamped) sample region; ties go to the lowest index.
std::pair<int, FlowField> select_candidate(const Image2D& i0, const Image2D& i1,
                                           const std::vector<FlowField>& candidates);

/// Mean post-warp misalignment used by select_candidate, exposed for reports.
double warp_misalignment(const Image2D& i0, const Image2D& i1, const FlowField& f);

}  // namespace usct
