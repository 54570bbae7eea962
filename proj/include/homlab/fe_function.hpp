#pragma once

#include <memory>
#include <vector>

#include "homlab/error.hpp"
#include "homlab/mesh.hpp"

namespace homlab {

/// Continuous piecewise-linear field given by its nodal values.
struct FeFunction {
    std::shared_ptr<const Mesh> mesh;
    std::vector<double> values;

    FeFunction() = default;
    FeFunction(std::shared_ptr<const Mesh> m, std::vector<double> v) : mesh(std::move(m)), values(std::move(v)) {
        if (!mesh || values.size() != mesh->num_vertices()) {
            throw Error("fem", "nodal vector length does not match vertex count");
        }
    }

    static FeFunction zeros(std::shared_ptr<const Mesh> m) {
        const auto n = m->num_vertices();
        return FeFunction(std::move(m), std::vector<double>(n, 0.0));
    }

    template <class Fn>
    static FeFunction interpolate(std::shared_ptr<const Mesh> m, Fn&& fn) {
        std::vector<double> v(m->num_vertices());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = fn(m->vertices[i]);
        return FeFunction(std::move(m), std::move(v));
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
    double& operator[](std::size_t i) { return values[i]; }
};

inline void require_same_mesh(const FeFunction& a, const FeFunction& b) {
    if (a.mesh != b.mesh) throw Error("fem", "functions live on different meshes");
}

inline void require_on_mesh(const FeFunction& u, const Mesh& mesh) {
    if (u.mesh.get() != &mesh || u.values.size() != mesh.num_vertices()) {
        throw Error("fem", "function is not defined on this mesh");
    }
}

}  // namespace homlab
