#include "hdccl/hcm_occ.hpp"

#include "hdccl/errors.hpp"
#include "hdccl/ops.hpp"

namespace hdccl {

template <typename T>
DirectionalVectors<T> directional_vectors(const Var<T>& d_fwd, const Var<T>& d_rev, const Var<T>& t_fwd,
                                          const Var<T>& t_rev) {
    for (const Var<T>* v : {&d_fwd, &d_rev, &t_fwd, &t_rev}) {
        if (!v->defined() || v->rows() == 0) {
            throw DimensionError("directional_vectors: empty sequence");
        }
    }
    if (d_fwd.rows() != d_rev.rows() || d_fwd.cols() != d_rev.cols()) {
        throw DimensionError("directional_vectors: forward and reverse change representations differ in shape");
    }
    if (t_fwd.cols() != t_rev.cols() || t_fwd.cols() != d_fwd.cols()) {
        throw DimensionError("directional_vectors: text and visual widths differ");
    }
    DirectionalVectors<T> dv;
    dv.delta_d = sub(mean_rows(d_fwd), mean_rows(d_rev));
    dv.delta_t = sub(mean_rows(t_fwd), mean_rows(t_rev));
    return dv;
}

template <typename T>
AlignmentLoss<T> alignment_loss(const DirectionalVectors<T>& dv, double gamma) {
    if (!(gamma > 0.0)) {
        throw ConfigError("alignment_loss: margin must be positive");
    }
    if (dv.negatives_d.empty() || dv.negatives_t.empty()) {
        throw ConfigError("alignment_loss: needs at least one negative per modality");
    }
    const Var<T>& neg_d = dv.negatives_d.front();
    const Var<T>& neg_t = dv.negatives_t.front();
    AlignmentLoss<T> out;
    for (const Var<T>* v : {&dv.delta_d, &dv.delta_t, &neg_d, &neg_t}) {
        if (!(v->value().norm() > T(0))) out.degenerate = true;
    }
    const Var<T> margin = Var<T>::constant(Matrix<T>::Constant(1, 1, static_cast<T>(gamma)));
    Var<T> pos = cosine(dv.delta_t, dv.delta_d);
    Var<T> text_side = relu(add(sub(margin, pos), cosine(dv.delta_t, neg_d)));
    Var<T> visual_side = relu(add(sub(margin, pos), cosine(dv.delta_d, neg_t)));
    out.value = scale(add(text_side, visual_side), T(0.5));
    return out;
}

template DirectionalVectors<float> directional_vectors<float>(const Var<float>&, const Var<float>&,
                                                              const Var<float>&, const Var<float>&);
template DirectionalVectors<double> directional_vectors<double>(const Var<double>&, const Var<double>&,
                                                                const Var<double>&, const Var<double>&);
template AlignmentLoss<float> alignment_loss<float>(const DirectionalVectors<float>&, double);
template AlignmentLoss<double> alignment_loss<double>(const DirectionalVectors<double>&, double);

}  // namespace hdccl
