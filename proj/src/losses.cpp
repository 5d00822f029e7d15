#include "sanet/losses.hpp"

#include <algorithm>
#include <cmath>

namespace sanet::loss {
namespace {

template <typename T>
void check_pair(const Shape& pred, const Shape& target, const char* what)
{
    if (pred != target)
        throw ShapeError(std::string(what) + ": prediction " + pred.str() + " and target " + target.str() +
                         " differ");
}

}  // namespace

template <typename T>
nn::Var<T> jaccard_loss(const nn::Var<T>& pred, const Tensor<T>& target, double eps)
{
    check_pair<T>(pred.shape(), target.shape(), "jaccard_loss");
    const std::int64_t channels = pred.shape().c;
    std::vector<double> inter(static_cast<std::size_t>(channels)), uni(static_cast<std::size_t>(channels));
    double loss = 0.0;
    for (std::int64_t c = 0; c < channels; ++c) {
        auto p = pred.value().channel(c);
        auto g = target.channel(c);
        double i_sum = 0.0, u_sum = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
            i_sum += static_cast<double>(p[k]) * g[k];
            u_sum += static_cast<double>(p[k]) + g[k] - static_cast<double>(p[k]) * g[k];
        }
        inter[static_cast<std::size_t>(c)] = i_sum + eps;
        uni[static_cast<std::size_t>(c)] = u_sum + eps;
        loss += 1.0 - (i_sum + eps) / (u_sum + eps);
    }
    Tensor<T> out(vector_shape(1), static_cast<T>(loss));
    return nn::make_result<T>(std::move(out), {pred}, [target, inter, uni](nn::Node<T>& self) {
        auto& gp = self.parents[0]->grad_buffer();
        const double up = self.grad[0];
        for (std::int64_t c = 0; c < target.shape().c; ++c) {
            const double i = inter[static_cast<std::size_t>(c)], u = uni[static_cast<std::size_t>(c)];
            auto g = target.channel(c);
            auto dst = gp.channel(c);
            for (std::size_t k = 0; k < g.size(); ++k)
                dst[k] += static_cast<T>(-up * (g[k] * u - i * (1.0 - g[k])) / (u * u));
        }
    });
}

template <typename T>
nn::Var<T> focal_loss(const nn::Var<T>& pred, const Tensor<T>& target, double gamma, double clamp)
{
    check_pair<T>(pred.shape(), target.shape(), "focal_loss");
    const std::size_t n = pred.value().size();
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double p = std::clamp(static_cast<double>(pred.value()[k]), clamp, 1.0 - clamp);
        const double pt = target[k] > T(0.5) ? p : 1.0 - p;
        loss -= std::pow(1.0 - pt, gamma) * std::log(pt);
    }
    loss /= static_cast<double>(n);
    Tensor<T> out(vector_shape(1), static_cast<T>(loss));
    return nn::make_result<T>(std::move(out), {pred}, [target, gamma, clamp](nn::Node<T>& self) {
        const auto& pn = self.parents[0];
        auto& gp = pn->grad_buffer();
        const std::size_t n = gp.size();
        const double scale = self.grad[0] / static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            const double raw = pn->value[k];
            if (raw < clamp || raw > 1.0 - clamp)
                continue;  // clamped: flat
            const bool positive = target[k] > T(0.5);
            const double pt = positive ? raw : 1.0 - raw;
            double d_pt = -std::pow(1.0 - pt, gamma) / pt;
            if (gamma != 0.0)
                d_pt += gamma * std::pow(1.0 - pt, gamma - 1.0) * std::log(pt);
            gp[k] += static_cast<T>(scale * (positive ? d_pt : -d_pt));
        }
    });
}

template <typename T>
LossTerms<T> total_loss(const nn::ModelOutput<T>& output, const Tensor<T>& target, const LossOptions& opts)
{
    std::vector<nn::Var<T>> heads{output.probabilities};
    heads.insert(heads.end(), output.ds_probabilities.begin(), output.ds_probabilities.end());
    LossTerms<T> terms;
    std::vector<nn::Var<T>> per_head;
    for (const auto& head : heads) {
        if (head.shape() != target.shape())
            throw ShapeError("loss head " + head.shape().str() + " does not match target " + target.shape().str());
        const nn::Var<T> j = jaccard_loss(head, target, opts.jaccard_eps);
        const nn::Var<T> f = focal_loss(head, target, opts.focal_gamma, opts.focal_clamp);
        terms.per_head.push_back({static_cast<double>(j.value()[0]), static_cast<double>(f.value()[0])});
        terms.jaccard += terms.per_head.back().jaccard;
        terms.focal += terms.per_head.back().focal;
        per_head.push_back(nn::add(j, f));
    }
    terms.jaccard /= static_cast<double>(heads.size());
    terms.focal /= static_cast<double>(heads.size());
    terms.total = nn::mean_of(per_head);
    return terms;
}

template <typename T>
double composite_loss(const Tensor<T>& probabilities, const Tensor<T>& target, const LossOptions& opts)
{
    nn::NoGradGuard guard;
    const nn::Var<T> p(probabilities);
    return static_cast<double>(jaccard_loss(p, target, opts.jaccard_eps).value()[0]) +
           static_cast<double>(focal_loss(p, target, opts.focal_gamma, opts.focal_clamp).value()[0]);
}

#define SANET_INSTANTIATE_LOSSES(T)                                                                            \
    template nn::Var<T> jaccard_loss(const nn::Var<T>&, const Tensor<T>&, double);                             \
    template nn::Var<T> focal_loss(const nn::Var<T>&, const Tensor<T>&, double, double);                       \
    template LossTerms<T> total_loss(const nn::ModelOutput<T>&, const Tensor<T>&, const LossOptions&);         \
    template double composite_loss(const Tensor<T>&, const Tensor<T>&, const LossOptions&);

SANET_INSTANTIATE_LOSSES(float)
SANET_INSTANTIATE_LOSSES(double)

}  // namespace sanet::loss
