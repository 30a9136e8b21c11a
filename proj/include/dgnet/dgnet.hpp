#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "dgnet/ops.hpp"
#include "dgnet/parameter.hpp"

namespace dgnet {

enum class Variant { S, L, Custom };

/// Whether the channel-combination block sees stem features (default) or the
/// raw RGB image, which makes the (R'G'B', RGB) concat literal.
enum class FrrInput { Features, Rgb };

/// Structural switches used by the ablation arms. Defaults build the full model.
struct Ablation {
    bool frr = true;           ///< false: remove the whole FRR module
    bool frs = true;           ///< false: remove the whole FRS module
    bool cci = true;           ///< false: FRR is the fusion stack alone
    bool fsm = true;           ///< false: a 1x1 projection restores the channel count
    bool sense_sigmoid = true; ///< false: Sense correction added without the sigmoid gate
    bool laplacian = true;     ///< false: high-pass branch replaced by a zero map
    bool sense_tail = true;    ///< false: attention map added directly, no CBM/conv/sigmoid tail
    bool frr_instead = false;  ///< replace FRR with a plain CBM group of matched size
    bool frs_instead = false;  ///< replace FRS with a plain CBM group of matched size

    friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelConfig {
    Variant variant = Variant::S;
    int n1 = 3;          ///< grouped CBM blocks in CCI
    int n2 = 3;          ///< CBM blocks in the fusion stack
    int base_width = 39; ///< feature channels between modules; divisible by 3
    int sense_blocks = 2;
    FrrInput frr_input = FrrInput::Features;
    Ablation ablation;

    static ModelConfig small();
    static ModelConfig large();
    static ModelConfig for_variant(Variant variant);

    /// Throws ConfigError on violated invariants.
    void validate() const;

    /// Flat key=value text, one pair per line.
    std::string serialize() const;
    static ModelConfig parse(const std::string& text);

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

std::string to_string(Variant variant);
Variant parse_variant(const std::string& text);

/// Fixed 3x3 Laplacian [[0,1,0],[1,-4,1],[0,1,0]] replicated per channel,
/// shaped (channels, 1, 3, 3) for a depthwise convolution.
template <class T>
Tensor<T> laplacian_kernel(std::int64_t channels);

/// Depthwise Laplacian response with replicate padding, so a constant image
/// gives exactly zero.
template <class T>
Tensor<T> laplacian_highpass(const Tensor<T>& input, const Tensor<T>& kernel);

/// Conv(3x3, no bias) -> BatchNorm -> Mish.
template <class T>
class Cbm {
public:
    Cbm(const std::string& name, std::int64_t in_channels, std::int64_t out_channels, int groups,
        std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& x, Mode mode);
    void visit(const std::function<void(Parameter<T>&)>& params,
               const std::function<void(const std::string&, std::vector<T>&)>& buffers);
    std::int64_t out_channels() const { return weight_.tensor.shape().n; }

private:
    std::string name_;
    Parameter<T> weight_;
    Parameter<T> gamma_;
    Parameter<T> beta_;
    BatchNormState<T> bn_;
    int groups_;
};

/// Channel combination inference: concat(f, f) -> n1 grouped CBMs (groups = 3)
/// -> concat(C_fix, f).
template <class T>
class CciBlock {
public:
    CciBlock(const std::string& name, std::int64_t in_channels, std::int64_t width, int depth,
             std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& f_in, Mode mode);
    /// The grouped stack alone, applied to an already combined tensor.
    Tensor<T> grouped_forward(const Tensor<T>& combined, Mode mode);
    std::int64_t out_channels() const;
    void visit(const std::function<void(Parameter<T>&)>& params,
               const std::function<void(const std::string&, std::vector<T>&)>& buffers);

private:
    std::int64_t in_channels_;
    std::vector<Cbm<T>> gcb_;
};

/// FRR: optional CCI followed by the fusion stack (n2 CBMs) or, without the
/// stack, a 1x1 projection back to the base width.
template <class T>
class FrrModule {
public:
    FrrModule(const ModelConfig& config, std::int64_t in_channels, std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& f_in, Mode mode);
    CciBlock<T>* cci() { return cci_ ? &*cci_ : nullptr; }
    Tensor<T> fusion_forward(const Tensor<T>& b_fix, Mode mode);
    std::size_t fusion_blocks() const { return fsm_.size(); }
    void visit(const std::function<void(Parameter<T>&)>& params,
               const std::function<void(const std::string&, std::vector<T>&)>& buffers);

private:
    std::optional<CciBlock<T>> cci_;
    std::vector<Cbm<T>> fsm_;
    std::optional<Parameter<T>> proj_weight_;
    std::optional<Parameter<T>> proj_bias_;
};

/// Sense block: F_normal = CBM(f); A = Mish(BN(F_normal - Laplacian(f)));
/// S = f + Sigmoid(Conv(CBM(A))).
template <class T>
class SenseBlock {
public:
    SenseBlock(const std::string& name, std::int64_t channels, const Ablation& ablation,
               std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& f_in, Mode mode);
    const Parameter<T>& laplacian() const { return laplacian_; }
    void visit(const std::function<void(Parameter<T>&)>& params,
               const std::function<void(const std::string&, std::vector<T>&)>& buffers);

private:
    bool use_laplacian_;
    bool use_tail_;
    bool use_sigmoid_;
    Parameter<T> laplacian_;
    Cbm<T> normal_;
    Parameter<T> gamma_;
    Parameter<T> beta_;
    BatchNormState<T> bn_;
    std::optional<Cbm<T>> tail_;
    std::optional<Parameter<T>> conv_weight_;
    std::optional<Parameter<T>> conv_bias_;
};

/// Plain stack of CBMs: in -> hidden x (depth - 1) -> out. Stands in for FRR or
/// FRS in the "Instead" arms with matched depth (receptive field) and size.
template <class T>
class CbmGroup {
public:
    CbmGroup(const std::string& name, std::int64_t in_channels, std::int64_t hidden,
             std::int64_t out_channels, int depth, std::mt19937_64& rng);

    Tensor<T> forward(const Tensor<T>& x, Mode mode);
    void visit(const std::function<void(Parameter<T>&)>& params,
               const std::function<void(const std::string&, std::vector<T>&)>& buffers);

    /// Trainable parameters of such a group, without building it.
    static std::int64_t count(std::int64_t in_channels, std::int64_t hidden, std::int64_t out_channels,
                              int depth);
    /// Hidden width whose group size is closest to target.
    static std::int64_t matched_hidden(std::int64_t in_channels, std::int64_t out_channels, int depth,
                                       std::int64_t target);

private:
    std::vector<Cbm<T>> blocks_;
};

/// Trainable parameter counts of the replaced modules and their stand-ins.
struct ReplacementAudit {
    std::int64_t module_params = 0;
    std::int64_t replacement_params = 0;
    std::int64_t hidden = 0;
    int depth = 0;
};

template <class T>
class DGNet {
public:
    DGNet(const ModelConfig& config, std::uint64_t seed);

    DGNet(const DGNet&) = delete;
    DGNet& operator=(const DGNet&) = delete;
    DGNet(DGNet&&) noexcept = default;
    DGNet& operator=(DGNet&&) noexcept = default;

    /// image: (N, 3, H, W) in [0, 1], H and W >= 16 and divisible by 8.
    Tensor<T> forward(const Tensor<T>& image, Mode mode);

    const ModelConfig& config() const { return config_; }

    std::vector<Parameter<T>*> parameters();
    /// Batch-norm running statistics, named "<layer>.running_mean" / ".running_var".
    void visit_buffers(const std::function<void(const std::string&, std::vector<T>&)>& fn);
    std::int64_t trainable_count();
    void zero_grad();

    /// Copies every parameter value and buffer from a model of the same config.
    void copy_state_from(DGNet& other);

    Cbm<T>* stem() { return stem_ ? &*stem_ : nullptr; }
    FrrModule<T>* frr() { return frr_ ? &*frr_ : nullptr; }
    std::vector<SenseBlock<T>>& sense_blocks() { return sense_; }
    const std::optional<ReplacementAudit>& frr_audit() const { return frr_audit_; }
    const std::optional<ReplacementAudit>& frs_audit() const { return frs_audit_; }

private:
    void visit(const std::function<void(Parameter<T>&)>& params,
               const std::function<void(const std::string&, std::vector<T>&)>& buffers);

    ModelConfig config_;
    std::optional<Cbm<T>> stem_;
    std::optional<FrrModule<T>> frr_;
    std::optional<CbmGroup<T>> frr_group_;
    std::vector<SenseBlock<T>> sense_;
    std::optional<CbmGroup<T>> frs_group_;
    Parameter<T> head_weight_;
    Parameter<T> head_bias_;
    std::optional<ReplacementAudit> frr_audit_;
    std::optional<ReplacementAudit> frs_audit_;
};

/// Exact number of trainable scalars (the fixed Laplacian kernels excluded).
std::int64_t param_count(const ModelConfig& config);

/// Checks the dgnet_forward input contract; throws DimensionError / ValidationError.
template <class T>
void validate_image_batch(const Tensor<T>& image);

} // namespace dgnet
