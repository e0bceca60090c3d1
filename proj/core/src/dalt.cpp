#include "hdccl/dalt.hpp"

namespace hdccl {

std::string_view to_string(Region r) {
    switch (r) {
        case Region::Glo: return "glo";
        case Region::Com: return "com";
        case Region::Diff: return "diff";
    }
    return "?";
}

template <typename T>
RegionDecomposition<T> decompose(const PatchFeatures<T>& x, const Mask& mask) {
    const Index n = x.count();
    if (static_cast<Index>(mask.size()) != n) {
        throw DimensionError("decompose: mask has " + std::to_string(mask.size()) + " entries but there are " +
                             std::to_string(n) + " patches");
    }
    RegionDecomposition<T> dec;
    dec.mask = mask;
    Matrix<T> keep(n, x.dim());
    for (Index i = 0; i < n; ++i) {
        const std::uint8_t m = mask[static_cast<std::size_t>(i)];
        if (m > 1) {
            throw ConfigError("decompose: mask entries must be 0 or 1");
        }
        keep.row(i).setConstant(static_cast<T>(m));
        dec.index_sets[static_cast<std::size_t>(Region::Glo)].push_back(i);
        dec.index_sets[static_cast<std::size_t>(m ? Region::Com : Region::Diff)].push_back(i);
    }
    dec.x_com = mul(x.features, Var<T>::constant(keep));
    dec.x_diff = mul(x.features, Var<T>::constant(Matrix<T>::Ones(n, x.dim()) - keep));
    return dec;
}

template <typename T>
RegionFeatures<T> encode_regions(const RegionDecomposition<T>& dec, const PatchFeatures<T>& x,
                                 const DaltParams<T>& params) {
    const Index n = x.count();
    if (x.dim() != params.dim()) {
        throw DimensionError("encode_regions: features have width " + std::to_string(x.dim()) + ", encoder expects " +
                             std::to_string(params.dim()));
    }
    if (static_cast<Index>(dec.mask.size()) != n) {
        throw DimensionError("encode_regions: decomposition does not match the features");
    }
    Var<T> tokens = x.features;
    if (params.position.defined()) {
        if (params.position.rows() != n) {
            throw DimensionError("encode_regions: position table has " + std::to_string(params.position.rows()) +
                                 " rows for " + std::to_string(n) + " patches");
        }
        tokens = add(tokens, params.position);
    }
    RegionFeatures<T> out;
    for (Region r : kRegions) {
        const auto ri = static_cast<Index>(r);
        Var<T> cls = slice_rows(params.cls, ri, 1);
        const auto& idx = dec.indices(r);
        Var<T> seq;
        if (r == Region::Glo) {
            seq = concat_rows<T>({cls, tokens});
        } else if (idx.empty()) {
            seq = cls;
        } else {
            seq = concat_rows<T>({cls, gather_rows(tokens, idx)});
        }
        Var<T> encoded = params.layer(seq);
        if (!encoded.value().allFinite()) {
            throw NumericError("encode_regions: non-finite output in the " + std::string(to_string(r)) + " pass");
        }
        out.cls[static_cast<std::size_t>(r)] = slice_rows(encoded, 0, 1);
        if (r == Region::Glo) {
            out.patch_features = slice_rows(encoded, 1, n);
        }
    }
    return out;
}

template RegionDecomposition<float> decompose<float>(const PatchFeatures<float>&, const Mask&);
template RegionDecomposition<double> decompose<double>(const PatchFeatures<double>&, const Mask&);
template RegionFeatures<float> encode_regions<float>(const RegionDecomposition<float>&, const PatchFeatures<float>&,
                                                     const DaltParams<float>&);
template RegionFeatures<double> encode_regions<double>(const RegionDecomposition<double>&,
                                                       const PatchFeatures<double>&, const DaltParams<double>&);

}  // namespace hdccl
