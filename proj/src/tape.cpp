#include "evf/tape.hpp"

#include <algorithm>
#include <cmath>

#include "evf/kernels.hpp"

namespace evf {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Relu: return "relu";
        case Op::Softplus: return "softplus";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Broadcast: return "broadcast";
        case Op::MeanStack: return "mean_stack";
    }
    return "?";
}

const Tape::Node& Tape::node(Id id) const {
    check(id >= 0 && static_cast<size_t>(id) < nodes_.size(), "tape: bad node id");
    return nodes_[static_cast<size_t>(id)];
}

std::string Tape::label(Id id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    std::string s = "n" + std::to_string(id) + ":" + op_name(n.op);
    if (!n.name.empty()) s += "(" + n.name + ")";
    return s;
}

Tape::Id Tape::find(const std::string& name) const {
    for (size_t i = 0; i < nodes_.size(); ++i)
        if (nodes_[i].name == name) return static_cast<Id>(i);
    return -1;
}

bool Tape::has_grad(Id id) const {
    return backward_done_ && static_cast<size_t>(id) < grads_.size() &&
           !grads_[static_cast<size_t>(id)].data.empty();
}

Tensor Tape::grad(Id leaf) const {
    const Node& n = node(leaf);
    if (has_grad(leaf)) return grads_[static_cast<size_t>(leaf)];
    return Tensor::zeros(n.value.shape);
}

Tape::Id Tape::push(Node n) {
    // eager evaluation: inputs were recorded earlier, so definition order is
    // topological by construction
    if (n.op != Op::Leaf) {
        for (Id i : n.in) n.grad_path = n.grad_path || nodes_[static_cast<size_t>(i)].grad_path;
        std::vector<float> out(static_cast<size_t>(Tensor::numel(n.value.shape)));
        auto in_ptr = [&](size_t slot) -> const float* {
            return nodes_[static_cast<size_t>(n.in[slot])].value.data.data();
        };
        eval_node<float>(n, in_ptr, out.data());
        n.value.data = std::move(out);
    } else {
        n.grad_path = n.requires_grad;
    }
    nodes_.push_back(std::move(n));
    Id id = static_cast<Id>(nodes_.size() - 1);
    const Tensor& v = nodes_.back().value;
    for (float x : v.data)
        if (!std::isfinite(x))
            throw std::runtime_error("tape: non-finite value in " + label(id));
    return id;
}

Tape::Id Tape::leaf(Tensor v, bool requires_grad, std::string name) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.name = std::move(name);
    return push(std::move(n));
}

Tape::Id Tape::constant(Tensor v, std::string name) { return leaf(std::move(v), false, std::move(name)); }

Tape::Id Tape::scalar(float v) { return constant(Tensor::scalar(v)); }

static bool scalar_shape(const std::vector<int>& s) { return s.size() == 1 && s[0] == 1; }

static void check_binary(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape == b.shape) return;
    if (scalar_shape(a.shape) || scalar_shape(b.shape)) return;
    throw std::runtime_error(std::string("tape: ") + what + " shape mismatch " +
                             shape_str(a.shape) + " vs " + shape_str(b.shape));
}

Tape::Id Tape::matmul(Id a, Id b) {
    const Tensor& ta = value(a);
    const Tensor& tb = value(b);
    check(ta.rank() == 2, "tape: matmul lhs must be rank 2, got " + shape_str(ta.shape));
    check(tb.rank() == 2 || tb.rank() == 1,
          "tape: matmul rhs must be rank 1 or 2, got " + shape_str(tb.shape));
    int k = ta.dim(1);
    int k2 = tb.dim(0);
    check(k == k2, "tape: matmul inner dims " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Node n;
    n.op = Op::MatMul;
    n.in = {a, b};
    n.value.shape = tb.rank() == 2 ? std::vector<int>{ta.dim(0), tb.dim(1)}
                                   : std::vector<int>{ta.dim(0)};
    return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
    check_binary(value(a), value(b), "add");
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.value.shape = scalar_shape(value(a).shape) ? value(b).shape : value(a).shape;
    return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
    check_binary(value(a), value(b), "sub");
    Node n;
    n.op = Op::Sub;
    n.in = {a, b};
    n.value.shape = scalar_shape(value(a).shape) ? value(b).shape : value(a).shape;
    return push(std::move(n));
}

Tape::Id Tape::mul(Id a, Id b) {
    check_binary(value(a), value(b), "mul");
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.value.shape = scalar_shape(value(a).shape) ? value(b).shape : value(a).shape;
    return push(std::move(n));
}

Tape::Id Tape::concat(const std::vector<Id>& xs) {
    check(!xs.empty(), "tape: concat of nothing");
    int total = 0;
    for (Id x : xs) {
        check(value(x).rank() == 1, "tape: concat expects rank-1 inputs");
        total += value(x).dim(0);
    }
    Node n;
    n.op = Op::Concat;
    n.in = xs;
    n.value.shape = {total};
    return push(std::move(n));
}

Tape::Id Tape::slice(Id a, int begin, int len) {
    const Tensor& t = value(a);
    check(t.rank() == 1, "tape: slice expects rank-1 input");
    check(begin >= 0 && len > 0 && begin + len <= t.dim(0),
          "tape: slice [" + std::to_string(begin) + "," + std::to_string(begin + len) +
              ") out of range for " + shape_str(t.shape));
    Node n;
    n.op = Op::Slice;
    n.in = {a};
    n.a0 = begin;
    n.a1 = len;
    n.value.shape = {len};
    return push(std::move(n));
}

Tape::Id Tape::unary(Op op, Id a) {
    Node n;
    n.op = op;
    n.in = {a};
    n.value.shape = value(a).shape;
    return push(std::move(n));
}

Tape::Id Tape::sigmoid(Id a) { return unary(Op::Sigmoid, a); }
Tape::Id Tape::tanh(Id a) { return unary(Op::Tanh, a); }
Tape::Id Tape::relu(Id a) { return unary(Op::Relu, a); }
Tape::Id Tape::softplus(Id a) { return unary(Op::Softplus, a); }
Tape::Id Tape::exp(Id a) { return unary(Op::Exp, a); }
Tape::Id Tape::log(Id a) { return unary(Op::Log, a); }
Tape::Id Tape::square(Id a) { return unary(Op::Square, a); }

Tape::Id Tape::sum(Id a) {
    Node n;
    n.op = Op::Sum;
    n.in = {a};
    n.value.shape = {1};
    return push(std::move(n));
}

Tape::Id Tape::mean(Id a) {
    Node n;
    n.op = Op::Mean;
    n.in = {a};
    n.value.shape = {1};
    return push(std::move(n));
}

Tape::Id Tape::broadcast(Id a, std::vector<int> shape) {
    check(scalar_shape(value(a).shape), "tape: broadcast input must be a scalar");
    Node n;
    n.op = Op::Broadcast;
    n.in = {a};
    n.value.shape = std::move(shape);
    return push(std::move(n));
}

Tape::Id Tape::mean_stack(const std::vector<Id>& xs) {
    check(!xs.empty(), "tape: mean_stack of nothing");
    for (Id x : xs)
        check(value(x).shape == value(xs[0]).shape, "tape: mean_stack shape mismatch");
    Node n;
    n.op = Op::MeanStack;
    n.in = xs;
    n.value.shape = value(xs[0]).shape;
    // canonical summation order: lexicographic over the input values, so the
    // pooled result is invariant (bitwise) to input permutation
    n.perm.resize(xs.size());
    for (size_t i = 0; i < xs.size(); ++i) n.perm[i] = static_cast<int>(i);
    std::stable_sort(n.perm.begin(), n.perm.end(), [&](int i, int j) {
        const auto& vi = value(xs[static_cast<size_t>(i)]).data;
        const auto& vj = value(xs[static_cast<size_t>(j)]).data;
        return std::lexicographical_compare(vi.begin(), vi.end(), vj.begin(), vj.end());
    });
    return push(std::move(n));
}

template <typename S, typename GetPtr>
void Tape::eval_node(const Node& n, GetPtr in_ptr, S* out) const {
    auto in_shape = [&](size_t slot) -> const std::vector<int>& {
        return nodes_[static_cast<size_t>(n.in[slot])].value.shape;
    };
    const int64_t count = Tensor::numel(n.value.shape);
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul: {
            const auto& sa = in_shape(0);
            const auto& sb = in_shape(1);
            int m = sa[0], k = sa[1];
            int nn = sb.size() == 2 ? sb[1] : 1;
            kernels::matmul(in_ptr(0), in_ptr(1), out, m, k, nn);
            break;
        }
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            const S* a = in_ptr(0);
            const S* b = in_ptr(1);
            bool sa = scalar_shape(in_shape(0));
            bool sb = scalar_shape(in_shape(1));
            for (int64_t i = 0; i < count; ++i) {
                S x = sa ? a[0] : a[i];
                S y = sb ? b[0] : b[i];
                out[i] = n.op == Op::Add ? x + y : (n.op == Op::Sub ? x - y : x * y);
            }
            break;
        }
        case Op::Concat: {
            int64_t off = 0;
            for (size_t s = 0; s < n.in.size(); ++s) {
                int64_t len = Tensor::numel(in_shape(s));
                const S* a = in_ptr(s);
                for (int64_t i = 0; i < len; ++i) out[off + i] = a[i];
                off += len;
            }
            break;
        }
        case Op::Slice: {
            const S* a = in_ptr(0);
            for (int i = 0; i < n.a1; ++i) out[i] = a[n.a0 + i];
            break;
        }
        case Op::Sigmoid: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = kernels::sigmoid(a[i]);
            break;
        }
        case Op::Tanh: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = std::tanh(a[i]);
            break;
        }
        case Op::Relu: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = a[i] > S(0) ? a[i] : S(0);
            break;
        }
        case Op::Softplus: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = kernels::softplus(a[i]);
            break;
        }
        case Op::Exp: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = std::exp(a[i]);
            break;
        }
        case Op::Log: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = std::log(a[i]);
            break;
        }
        case Op::Square: {
            const S* a = in_ptr(0);
            for (int64_t i = 0; i < count; ++i) out[i] = a[i] * a[i];
            break;
        }
        case Op::Sum: {
            const S* a = in_ptr(0);
            int64_t len = Tensor::numel(in_shape(0));
            S acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
            int64_t i = 0;
            for (; i + 4 <= len; i += 4) {
                acc0 += a[i];
                acc1 += a[i + 1];
                acc2 += a[i + 2];
                acc3 += a[i + 3];
            }
            S acc = (acc0 + acc1) + (acc2 + acc3);
            for (; i < len; ++i) acc += a[i];
            out[0] = acc;
            break;
        }
        case Op::Mean: {
            const S* a = in_ptr(0);
            int64_t len = Tensor::numel(in_shape(0));
            S acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
            int64_t i = 0;
            for (; i + 4 <= len; i += 4) {
                acc0 += a[i];
                acc1 += a[i + 1];
                acc2 += a[i + 2];
                acc3 += a[i + 3];
            }
            S acc = (acc0 + acc1) + (acc2 + acc3);
            for (; i < len; ++i) acc += a[i];
            out[0] = acc / S(len);
            break;
        }
        case Op::Broadcast: {
            const S a = in_ptr(0)[0];
            for (int64_t i = 0; i < count; ++i) out[i] = a;
            break;
        }
        case Op::MeanStack: {
            // f64 accumulation in the recorded canonical order: permutation
            // invariant by ordering, duplication idempotent by exactness
            const int m = static_cast<int>(n.in.size());
            for (int64_t i = 0; i < count; ++i) {
                double acc = 0.0;
                for (int r = 0; r < m; ++r)
                    acc += static_cast<double>(in_ptr(static_cast<size_t>(n.perm[r]))[i]);
                out[i] = static_cast<S>(acc / m);
            }
            break;
        }
    }
}

void Tape::backward(Id loss) {
    const Node& ln = node(loss);
    check(scalar_shape(ln.value.shape),
          "tape: backward needs a scalar loss, got " + shape_str(ln.value.shape));
    check(!backward_done_, "tape: backward already ran");
    backward_done_ = true;
    grads_.assign(nodes_.size(), Tensor{});
    auto touch = [&](Id id) -> Tensor& {
        Tensor& g = grads_[static_cast<size_t>(id)];
        if (g.data.empty()) g = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.shape);
        return g;
    };
    touch(loss).data[0] = 1.0f;

    for (Id id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        if (n.op == Op::Leaf || !n.grad_path) continue;
        Tensor& gt = grads_[static_cast<size_t>(id)];
        if (gt.data.empty()) continue;  // not on any path to the loss
        const float* g = gt.data.data();
        const int64_t count = gt.size();
        auto want = [&](size_t slot) {
            return nodes_[static_cast<size_t>(n.in[slot])].grad_path;
        };
        auto inval = [&](size_t slot) -> const Tensor& {
            return nodes_[static_cast<size_t>(n.in[slot])].value;
        };
        switch (n.op) {
            case Op::MatMul: {
                const Tensor& A = inval(0);
                const Tensor& B = inval(1);
                int m = A.dim(0), k = A.dim(1);
                int nn = B.rank() == 2 ? B.dim(1) : 1;
                if (want(0)) {
                    float* ga = touch(n.in[0]).data.data();
                    if (nn == 1) {
                        for (int i = 0; i < m; ++i)
                            kernels::axpy(g[i], B.data.data(), ga + static_cast<int64_t>(i) * k, k);
                    } else {
                        // gA[i,kk] = dot(g[i,:], B[kk,:])
                        for (int i = 0; i < m; ++i)
                            for (int kk = 0; kk < k; ++kk)
                                ga[static_cast<int64_t>(i) * k + kk] +=
                                    kernels::dot(g + static_cast<int64_t>(i) * nn,
                                                 B.data.data() + static_cast<int64_t>(kk) * nn, nn);
                    }
                }
                if (want(1)) {
                    float* gb = touch(n.in[1]).data.data();
                    if (nn == 1) {
                        for (int i = 0; i < m; ++i)
                            kernels::axpy(g[i], A.data.data() + static_cast<int64_t>(i) * k, gb, k);
                    } else {
                        for (int i = 0; i < m; ++i)
                            for (int kk = 0; kk < k; ++kk)
                                kernels::axpy(A.data[static_cast<int64_t>(i) * k + kk],
                                              g + static_cast<int64_t>(i) * nn,
                                              gb + static_cast<int64_t>(kk) * nn, nn);
                    }
                }
                break;
            }
            case Op::Add:
            case Op::Sub: {
                const float sign1 = n.op == Op::Sub ? -1.0f : 1.0f;
                for (int slot = 0; slot < 2; ++slot) {
                    if (!want(static_cast<size_t>(slot))) continue;
                    const float s = slot == 0 ? 1.0f : sign1;
                    Tensor& gi = touch(n.in[static_cast<size_t>(slot)]);
                    if (scalar_shape(inval(static_cast<size_t>(slot)).shape) && count > 1) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < count; ++i) acc += g[i];
                        gi.data[0] += s * static_cast<float>(acc);
                    } else {
                        kernels::axpy(s, g, gi.data.data(), static_cast<int>(count));
                    }
                }
                break;
            }
            case Op::Mul: {
                for (int slot = 0; slot < 2; ++slot) {
                    if (!want(static_cast<size_t>(slot))) continue;
                    const Tensor& other = inval(slot == 0 ? 1 : 0);
                    bool other_scalar = scalar_shape(other.shape) && count > 1;
                    Tensor& gi = touch(n.in[static_cast<size_t>(slot)]);
                    if (scalar_shape(inval(static_cast<size_t>(slot)).shape) && count > 1) {
                        double acc = 0.0;
                        for (int64_t i = 0; i < count; ++i)
                            acc += static_cast<double>(g[i]) * other.data[static_cast<size_t>(i)];
                        gi.data[0] += static_cast<float>(acc);
                    } else {
                        for (int64_t i = 0; i < count; ++i)
                            gi.data[static_cast<size_t>(i)] +=
                                g[i] * (other_scalar ? other.data[0] : other.data[static_cast<size_t>(i)]);
                    }
                }
                break;
            }
            case Op::Concat: {
                int64_t off = 0;
                for (size_t s = 0; s < n.in.size(); ++s) {
                    int64_t len = inval(s).size();
                    if (want(s))
                        kernels::axpy(1.0f, g + off, touch(n.in[s]).data.data(),
                                      static_cast<int>(len));
                    off += len;
                }
                break;
            }
            case Op::Slice: {
                if (want(0))
                    kernels::axpy(1.0f, g, touch(n.in[0]).data.data() + n.a0, n.a1);
                break;
            }
            case Op::Sigmoid: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* v = n.value.data.data();
                for (int64_t i = 0; i < count; ++i) gi[i] += g[i] * v[i] * (1.0f - v[i]);
                break;
            }
            case Op::Tanh: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* v = n.value.data.data();
                for (int64_t i = 0; i < count; ++i) gi[i] += g[i] * (1.0f - v[i] * v[i]);
                break;
            }
            case Op::Relu: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* x = inval(0).data.data();
                for (int64_t i = 0; i < count; ++i)
                    if (x[i] > 0.0f) gi[i] += g[i];
                break;
            }
            case Op::Softplus: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* x = inval(0).data.data();
                for (int64_t i = 0; i < count; ++i) gi[i] += g[i] * kernels::sigmoid(x[i]);
                break;
            }
            case Op::Exp: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* v = n.value.data.data();
                for (int64_t i = 0; i < count; ++i) gi[i] += g[i] * v[i];
                break;
            }
            case Op::Log: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* x = inval(0).data.data();
                for (int64_t i = 0; i < count; ++i) gi[i] += g[i] / x[i];
                break;
            }
            case Op::Square: {
                if (!want(0)) break;
                float* gi = touch(n.in[0]).data.data();
                const float* x = inval(0).data.data();
                for (int64_t i = 0; i < count; ++i) gi[i] += g[i] * 2.0f * x[i];
                break;
            }
            case Op::Sum: {
                if (!want(0)) break;
                Tensor& gi = touch(n.in[0]);
                const float gs = g[0];
                for (auto& v : gi.data) v += gs;
                break;
            }
            case Op::Mean: {
                if (!want(0)) break;
                Tensor& gi = touch(n.in[0]);
                const float gs = g[0] * static_cast<float>(1.0 / static_cast<double>(gi.size()));
                for (auto& v : gi.data) v += gs;
                break;
            }
            case Op::Broadcast: {
                if (!want(0)) break;
                double acc = 0.0;
                for (int64_t i = 0; i < count; ++i) acc += g[i];
                touch(n.in[0]).data[0] += static_cast<float>(acc);
                break;
            }
            case Op::MeanStack: {
                const float w = static_cast<float>(1.0 / static_cast<double>(n.in.size()));
                for (size_t s = 0; s < n.in.size(); ++s)
                    if (want(s))
                        for (int64_t i = 0; i < count; ++i)
                            touch(n.in[s]).data[static_cast<size_t>(i)] += g[i] * w;
                break;
            }
            case Op::Leaf:
                break;
        }
    }
}

template <typename S>
std::vector<S> Tape::replay(Id out, const std::map<Id, std::vector<S>>& leaf_overrides) const {
    check(out >= 0 && static_cast<size_t>(out) < nodes_.size(), "tape: bad replay target");
    std::vector<std::vector<S>> vals(static_cast<size_t>(out) + 1);
    for (Id id = 0; id <= out; ++id) {
        const Node& n = nodes_[static_cast<size_t>(id)];
        auto& v = vals[static_cast<size_t>(id)];
        v.resize(n.value.data.size());
        if (n.op == Op::Leaf) {
            auto it = leaf_overrides.find(id);
            if (it != leaf_overrides.end()) {
                check(it->second.size() == v.size(), "tape: replay override size mismatch");
                v = it->second;
            } else {
                for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<S>(n.value.data[i]);
            }
            continue;
        }
        auto in_ptr = [&](size_t slot) -> const S* {
            return vals[static_cast<size_t>(n.in[slot])].data();
        };
        eval_node<S>(n, in_ptr, v.data());
        for (S x : v)
            if (!std::isfinite(static_cast<double>(x)))
                throw std::runtime_error("tape: non-finite value in replay at " + label(id));
    }
    return vals[static_cast<size_t>(out)];
}

template std::vector<float> Tape::replay<float>(Id, const std::map<Id, std::vector<float>>&) const;
template std::vector<double> Tape::replay<double>(Id, const std::map<Id, std::vector<double>>&) const;

std::vector<double> Tape::finite_difference(Id loss, Id leaf, double h) const {
    check(h > 0.0, "finite_difference: h must be positive");
    const Node& ln = node(loss);
    check(scalar_shape(ln.value.shape), "finite_difference: loss must be scalar");
    const Node& lf = node(leaf);
    check(lf.op == Op::Leaf, "finite_difference: target must be a leaf");
    std::vector<double> base(lf.value.data.begin(), lf.value.data.end());
    std::vector<double> grad(base.size());
    for (size_t i = 0; i < base.size(); ++i) {
        std::map<Id, std::vector<double>> ov;
        ov[leaf] = base;
        ov[leaf][i] = base[i] + h;
        double fp = replay<double>(loss, ov)[0];
        ov[leaf][i] = base[i] - h;
        double fm = replay<double>(loss, ov)[0];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

Tensor Tape::finite_difference_tensor(Id loss, Id leaf, double h) const {
    auto g = finite_difference(loss, leaf, h);
    Tensor t = Tensor::zeros(node(leaf).value.shape);
    for (size_t i = 0; i < g.size(); ++i) t.data[i] = static_cast<float>(g[i]);
    return t;
}

}  // namespace evf
