/*
   Copyright 2026 The evreg Authors

   Licensed under the Apache License, Version 2.0 (the "License");
   you may not use this file except in compliance with the License.
   You may obtain a copy of the License at

       http://www.apache.org/licenses/LICENSE-2.0

   Unless required by applicable law or agreed to in writing, software
   distributed under the License is distributed on an "AS IS" BASIS,
   WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
   See the License for the specific language governing permissions and
   limitations under the License.
*/

// Predictor formulas: parsing, printing and exact symbolic derivatives.
//
// A formula is parsed into a hash-consed expression DAG. First and second
// derivatives with respect to every parameter are built symbolically once, at
// parse time, inside the same DAG, so subexpressions shared between the
// value, the Jacobian and the Hessian are evaluated once per observation.
//
// Grammar (see docs/formula.md):
//
//   expr    := term { ('+' | '-') term }
//   term    := unary { ('*' | '/') unary }
//   unary   := '-' unary | power
//   power   := primary [ '^' unary ]
//   primary := number | name | name '(' expr { ',' expr } ')' | '(' expr ')'

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "errors.hpp"

namespace evreg::formula {

enum class Op : std::uint8_t {
    constant,
    parameter,
    covariate,
    negate,
    add,
    subtract,
    multiply,
    divide,
    power,
    exp,
    log,
};

struct Node {
    Op op = Op::constant;
    std::int32_t lhs = -1;
    std::int32_t rhs = -1;
    std::int32_t ref = -1; // parameter or covariate index
    double value = 0.0;
    bool depends_on_params = false;
};

/// Append-only arena of interned nodes. Children always precede parents, so
/// node ids are a topological order.
class Graph {
public:
    int constant(double v) { return intern({Op::constant, -1, -1, -1, v, false}); }
    int parameter(int i) { return intern({Op::parameter, -1, -1, i, 0.0, true}); }
    int covariate(int i) { return intern({Op::covariate, -1, -1, i, 0.0, false}); }

    /// Verbatim construction, as written by the user.
    int make(Op op, int lhs, int rhs = -1) {
        const bool dep = nodes_[lhs].depends_on_params ||
                         (rhs >= 0 && nodes_[rhs].depends_on_params);
        return intern({op, lhs, rhs, -1, 0.0, dep});
    }

    // Folding builders used by the differentiator.
    int add(int a, int b) {
        if (is_const(a, 0.0)) return b;
        if (is_const(b, 0.0)) return a;
        if (both_const(a, b)) return constant(value(a) + value(b));
        return make(Op::add, a, b);
    }
    int sub(int a, int b) {
        if (is_const(b, 0.0)) return a;
        if (is_const(a, 0.0)) return neg(b);
        if (both_const(a, b)) return constant(value(a) - value(b));
        return make(Op::subtract, a, b);
    }
    int mul(int a, int b) {
        if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
        if (is_const(a, 1.0)) return b;
        if (is_const(b, 1.0)) return a;
        if (both_const(a, b)) return constant(value(a) * value(b));
        return make(Op::multiply, a, b);
    }
    int div(int a, int b) {
        if (is_const(a, 0.0)) return constant(0.0);
        if (is_const(b, 1.0)) return a;
        if (both_const(a, b) && value(b) != 0.0) return constant(value(a) / value(b));
        return make(Op::divide, a, b);
    }
    int neg(int a) {
        if (nodes_[a].op == Op::constant) return constant(-value(a));
        if (nodes_[a].op == Op::negate) return nodes_[a].lhs;
        return make(Op::negate, a);
    }
    int pow(int a, int b) {
        if (is_const(b, 1.0)) return a;
        return make(Op::power, a, b);
    }
    int exp(int a) { return make(Op::exp, a); }
    int log(int a) { return make(Op::log, a); }

    const Node& operator[](int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const noexcept { return nodes_.size(); }

    bool is_const(int id, double v) const {
        return nodes_[id].op == Op::constant && nodes_[id].value == v;
    }

private:
    struct Key {
        Op op;
        std::int32_t lhs, rhs, ref;
        std::uint64_t bits;
        bool operator==(const Key&) const = default;
    };
    struct KeyHash {
        std::size_t operator()(const Key& k) const noexcept {
            std::uint64_t h = static_cast<std::uint64_t>(k.op);
            for (std::uint64_t v : {static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.lhs)),
                                    static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.rhs)),
                                    static_cast<std::uint64_t>(static_cast<std::uint32_t>(k.ref)),
                                    k.bits})
                h = (h ^ v) * 0x100000001B3ull + (h >> 29);
            return static_cast<std::size_t>(h);
        }
    };

    double value(int id) const { return nodes_[id].value; }
    bool both_const(int a, int b) const {
        return nodes_[a].op == Op::constant && nodes_[b].op == Op::constant;
    }

    int intern(const Node& n) {
        // +0.0 and -0.0 intern separately; harmless.
        const Key key{n.op, n.lhs, n.rhs, n.ref, std::bit_cast<std::uint64_t>(n.value)};
        if (auto it = index_.find(key); it != index_.end())
            return it->second;
        const int id = static_cast<int>(nodes_.size());
        nodes_.push_back(n);
        index_.emplace(key, id);
        return id;
    }

    std::vector<Node> nodes_;
    std::unordered_map<Key, int, KeyHash> index_;
};

/// Which derivatives an evaluation has to produce.
enum class Order { value = 0, gradient = 1, hessian = 2 };

/// n x p x p array, row-major in (t, i, j).
class Array3 {
public:
    Array3() = default;
    Array3(Eigen::Index n, Eigen::Index p) : n_(n), p_(p), data_(static_cast<std::size_t>(n * p * p), 0.0) {}

    double& operator()(Eigen::Index t, Eigen::Index i, Eigen::Index j) {
        return data_[static_cast<std::size_t>((t * p_ + i) * p_ + j)];
    }
    double operator()(Eigen::Index t, Eigen::Index i, Eigen::Index j) const {
        return data_[static_cast<std::size_t>((t * p_ + i) * p_ + j)];
    }
    Eigen::Index rows() const noexcept { return n_; }
    Eigen::Index dim() const noexcept { return p_; }
    bool empty() const noexcept { return data_.empty(); }

    /// sum_t w_t * slice(t): the bracket product of an n-vector with the array.
    Eigen::MatrixXd weighted_sum(const Eigen::VectorXd& w) const {
        Eigen::MatrixXd out = Eigen::MatrixXd::Zero(p_, p_);
        if (data_.empty())
            return out;
        for (Eigen::Index t = 0; t < n_; ++t)
            out += w[t] * Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                              data_.data() + t * p_ * p_, p_, p_);
        return out;
    }

private:
    Eigen::Index n_ = 0;
    Eigen::Index p_ = 0;
    std::vector<double> data_;
};

/// Value, Jacobian and Hessian array of a predictor at every observation.
struct DerivBundle {
    Eigen::VectorXd value;
    Eigen::MatrixXd jac;
    Array3 hess;
};

class PredictorExpr;
PredictorExpr parse_predictor(std::string_view text, const std::vector<std::string>& param_names,
                              const std::vector<std::string>& covariate_names);

/// Parsed predictor with its symbolic derivatives. Immutable; copies share
/// the underlying graph.
class PredictorExpr {
public:
    PredictorExpr() = default;

    const std::vector<std::string>& params() const { return impl_->params; }
    const std::vector<std::string>& covariates() const { return impl_->covariates; }
    /// Covariates actually referenced by the formula.
    const std::vector<bool>& covariate_used() const { return impl_->covariate_used; }
    std::size_t num_params() const { return impl_->params.size(); }
    const Graph& graph() const { return impl_->graph; }
    int root() const { return impl_->root; }
    int jacobian_node(std::size_t i) const { return impl_->jac[i]; }
    int hessian_node(std::size_t i, std::size_t j) const {
        return i <= j ? impl_->hess[index(i, j)] : impl_->hess[index(j, i)];
    }
    const std::string& source() const { return impl_->source; }
    bool valid() const noexcept { return impl_ != nullptr; }

    /// True when every second derivative is identically zero.
    bool is_linear() const {
        return std::all_of(impl_->hess.begin(), impl_->hess.end(),
                           [&](int id) { return impl_->graph.is_const(id, 0.0); });
    }

    std::string to_string() const { return print(root()); }
    std::string print(int id) const;

    /// Evaluates the predictor at `theta` (ordered like params()). `columns`
    /// is aligned with covariates(); entries for unused covariates may be
    /// empty. Throws DomainError naming the 1-based observation on log or
    /// pow domain violations, division by zero or overflow.
    DerivBundle evaluate(std::span<const double> theta,
                         std::span<const std::span<const double>> columns, Eigen::Index n,
                         Order order = Order::hessian) const;

private:
    friend PredictorExpr parse_predictor(std::string_view, const std::vector<std::string>&,
                                         const std::vector<std::string>&);

    struct Impl {
        Graph graph;
        int root = -1;
        std::string source;
        std::vector<std::string> params;
        std::vector<std::string> covariates;
        std::vector<bool> covariate_used;
        std::vector<int> jac;
        std::vector<int> hess; // upper triangle, row-major
        std::array<std::vector<int>, 3> schedule;
    };

    std::size_t index(std::size_t i, std::size_t j) const {
        const std::size_t p = impl_->params.size();
        return i * p - i * (i - 1) / 2 + (j - i);
    }

    std::shared_ptr<const Impl> impl_;
};

namespace detail {

class Differentiator {
public:
    Differentiator(Graph& g, int param) : g_(g), param_(param) {}

    int operator()(int id) {
        if (auto it = memo_.find(id); it != memo_.end())
            return it->second;
        const int out = derive(id);
        memo_.emplace(id, out);
        return out;
    }

private:
    int derive(int id) {
        const Node n = g_[id];
        if (!n.depends_on_params)
            return g_.constant(0.0);
        switch (n.op) {
        case Op::constant:
        case Op::covariate: return g_.constant(0.0);
        case Op::parameter: return g_.constant(n.ref == param_ ? 1.0 : 0.0);
        case Op::negate: return g_.neg((*this)(n.lhs));
        case Op::add: return g_.add((*this)(n.lhs), (*this)(n.rhs));
        case Op::subtract: return g_.sub((*this)(n.lhs), (*this)(n.rhs));
        case Op::multiply:
            return g_.add(g_.mul((*this)(n.lhs), n.rhs), g_.mul(n.lhs, (*this)(n.rhs)));
        case Op::divide: {
            const int da = (*this)(n.lhs);
            const int db = (*this)(n.rhs);
            return g_.sub(g_.div(da, n.rhs), g_.div(g_.mul(n.lhs, db), g_.mul(n.rhs, n.rhs)));
        }
        case Op::exp: return g_.mul(id, (*this)(n.lhs));
        case Op::log: return g_.div((*this)(n.lhs), n.lhs);
        case Op::power: {
            const int da = (*this)(n.lhs);
            if (!g_[n.rhs].depends_on_params) {
                // b * a^(b-1) * a'
                const int bm1 = g_.sub(n.rhs, g_.constant(1.0));
                return g_.mul(g_.mul(n.rhs, g_.pow(n.lhs, bm1)), da);
            }
            // a^b * (b' log a + b a' / a)
            const int db = (*this)(n.rhs);
            return g_.mul(id, g_.add(g_.mul(db, g_.log(n.lhs)), g_.div(g_.mul(n.rhs, da), n.lhs)));
        }
        }
        return g_.constant(0.0);
    }

    Graph& g_;
    int param_;
    std::unordered_map<int, int> memo_;
};

class Parser {
public:
    Parser(std::string_view text, Graph& g, const std::vector<std::string>& params,
           const std::vector<std::string>& covariates, std::vector<bool>& used)
        : text_(text), g_(g), params_(params), covariates_(covariates), used_(used) {}

    int parse() {
        skip_space();
        if (pos_ >= text_.size())
            throw ParseError("empty formula", pos_);
        const int root = expr();
        skip_space();
        if (pos_ < text_.size())
            throw ParseError(std::string("unexpected '") + text_[pos_] + "'", pos_);
        return root;
    }

private:
    int expr() {
        int lhs = term();
        for (;;) {
            skip_space();
            if (accept('+'))
                lhs = g_.make(Op::add, lhs, term());
            else if (accept('-'))
                lhs = g_.make(Op::subtract, lhs, term());
            else
                return lhs;
        }
    }

    int term() {
        int lhs = unary();
        for (;;) {
            skip_space();
            if (accept('*'))
                lhs = g_.make(Op::multiply, lhs, unary());
            else if (accept('/'))
                lhs = g_.make(Op::divide, lhs, unary());
            else
                return lhs;
        }
    }

    int unary() {
        skip_space();
        if (accept('-'))
            return g_.make(Op::negate, unary());
        return power();
    }

    int power() {
        const int base = primary();
        skip_space();
        if (accept('^'))
            return g_.make(Op::power, base, unary());
        return base;
    }

    int primary() {
        skip_space();
        if (pos_ >= text_.size())
            throw ParseError("unexpected end of formula, expected an operand", pos_);
        const char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            const int inner = expr();
            skip_space();
            expect(')');
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.')
            return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_')
            return name();
        throw ParseError(std::string("expected an operand, found '") + c + "'", pos_);
    }

    int number() {
        const std::size_t start = pos_;
        double v = 0.0;
        const auto [end, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
        if (ec != std::errc())
            throw ParseError("malformed number", start);
        pos_ = static_cast<std::size_t>(end - text_.data());
        return g_.constant(v);
    }

    int name() {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_' ||
                text_[pos_] == '.'))
            ++pos_;
        const std::string id(text_.substr(start, pos_ - start));
        skip_space();
        if (pos_ < text_.size() && text_[pos_] == '(')
            return call(id, start);
        if (auto it = std::find(params_.begin(), params_.end(), id); it != params_.end())
            return g_.parameter(static_cast<int>(it - params_.begin()));
        if (auto it = std::find(covariates_.begin(), covariates_.end(), id); it != covariates_.end()) {
            const auto idx = static_cast<std::size_t>(it - covariates_.begin());
            used_[idx] = true;
            return g_.covariate(static_cast<int>(idx));
        }
        throw ParseError("unknown identifier '" + id + "'", start);
    }

    int call(const std::string& fn, std::size_t start) {
        expect('(');
        std::vector<int> args{expr()};
        skip_space();
        while (accept(',')) {
            args.push_back(expr());
            skip_space();
        }
        expect(')');
        const auto arity = [&](std::size_t want) {
            if (args.size() != want)
                throw ParseError(fn + "() takes " + std::to_string(want) + " argument" +
                                     (want == 1 ? "" : "s") + ", got " + std::to_string(args.size()),
                                 start);
        };
        if (fn == "exp") {
            arity(1);
            return g_.make(Op::exp, args[0]);
        }
        if (fn == "log") {
            arity(1);
            return g_.make(Op::log, args[0]);
        }
        if (fn == "pow") {
            arity(2);
            return g_.make(Op::power, args[0], args[1]);
        }
        throw ParseError("unknown function '" + fn + "'", start);
    }

    void skip_space() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
            ++pos_;
    }
    bool accept(char c) {
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    void expect(char c) {
        if (!accept(c)) {
            if (pos_ >= text_.size())
                throw ParseError(std::string("expected '") + c + "', found end of formula", pos_);
            throw ParseError(std::string("expected '") + c + "', found '" + text_[pos_] + "'", pos_);
        }
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    Graph& g_;
    const std::vector<std::string>& params_;
    const std::vector<std::string>& covariates_;
    std::vector<bool>& used_;
};

inline void collect(const Graph& g, int id, std::vector<bool>& seen) {
    if (id < 0 || seen[static_cast<std::size_t>(id)])
        return;
    seen[static_cast<std::size_t>(id)] = true;
    collect(g, g[id].lhs, seen);
    collect(g, g[id].rhs, seen);
}

inline std::string format_number(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace detail

/// Parses `text` over the given parameter and covariate names. Throws
/// ParseError carrying the byte offset of the offending token.
inline PredictorExpr parse_predictor(std::string_view text, const std::vector<std::string>& param_names,
                                     const std::vector<std::string>& covariate_names) {
    for (const auto& name : param_names)
        if (std::find(covariate_names.begin(), covariate_names.end(), name) != covariate_names.end())
            throw DataError("'" + name + "' is declared both as a parameter and as a covariate");
    for (std::size_t i = 0; i < param_names.size(); ++i)
        for (std::size_t j = i + 1; j < param_names.size(); ++j)
            if (param_names[i] == param_names[j])
                throw DataError("duplicate parameter name '" + param_names[i] + "'");

    auto impl = std::make_shared<PredictorExpr::Impl>();
    impl->source = std::string(text);
    impl->params = param_names;
    impl->covariates = covariate_names;
    impl->covariate_used.assign(covariate_names.size(), false);
    impl->root = detail::Parser(text, impl->graph, impl->params, impl->covariates,
                                impl->covariate_used)
                     .parse();

    const std::size_t p = param_names.size();
    impl->jac.resize(p);
    for (std::size_t i = 0; i < p; ++i)
        impl->jac[i] = detail::Differentiator(impl->graph, static_cast<int>(i))(impl->root);
    // Each (i, j) with i <= j is built once and serves both (i, j) and (j, i).
    for (std::size_t i = 0; i < p; ++i) {
        detail::Differentiator d(impl->graph, static_cast<int>(i));
        for (std::size_t j = i; j < p; ++j)
            impl->hess.push_back(d(impl->jac[j]));
    }

    std::vector<bool> seen(impl->graph.size(), false);
    const auto schedule = [&](std::vector<int>& out) {
        out.clear();
        for (std::size_t id = 0; id < seen.size(); ++id)
            if (seen[id])
                out.push_back(static_cast<int>(id));
    };
    seen.assign(impl->graph.size(), false);
    detail::collect(impl->graph, impl->root, seen);
    schedule(impl->schedule[0]);
    for (int id : impl->jac)
        detail::collect(impl->graph, id, seen);
    schedule(impl->schedule[1]);
    for (int id : impl->hess)
        detail::collect(impl->graph, id, seen);
    schedule(impl->schedule[2]);

    PredictorExpr out;
    out.impl_ = std::move(impl);
    return out;
}

inline std::string PredictorExpr::print(int id) const {
    const Graph& g = impl_->graph;
    // precedence: 1 additive, 2 multiplicative, 3 unary minus, 5 atom
    std::function<std::string(int, int)> rec = [&](int node, int ctx) -> std::string {
        const Node& n = g[node];
        int prec = 5;
        std::string s;
        switch (n.op) {
        case Op::constant:
            s = detail::format_number(n.value);
            if (n.value < 0 || std::signbit(n.value))
                s = "(" + s + ")";
            break;
        case Op::parameter: s = impl_->params[static_cast<std::size_t>(n.ref)]; break;
        case Op::covariate: s = impl_->covariates[static_cast<std::size_t>(n.ref)]; break;
        case Op::negate:
            prec = 3;
            s = "-" + rec(n.lhs, 3);
            break;
        case Op::add:
        case Op::subtract:
            prec = 1;
            s = rec(n.lhs, 1) + (n.op == Op::add ? " + " : " - ") + rec(n.rhs, 2);
            break;
        case Op::multiply:
        case Op::divide:
            prec = 2;
            s = rec(n.lhs, 2) + (n.op == Op::multiply ? "*" : "/") + rec(n.rhs, 3);
            break;
        case Op::power: s = "pow(" + rec(n.lhs, 0) + ", " + rec(n.rhs, 0) + ")"; break;
        case Op::exp: s = "exp(" + rec(n.lhs, 0) + ")"; break;
        case Op::log: s = "log(" + rec(n.lhs, 0) + ")"; break;
        }
        return prec < ctx ? "(" + s + ")" : s;
    };
    return rec(id, 0);
}

inline DerivBundle PredictorExpr::evaluate(std::span<const double> theta,
                                           std::span<const std::span<const double>> columns,
                                           Eigen::Index n, Order order) const {
    const Impl& im = *impl_;
    const std::size_t p = im.params.size();
    if (theta.size() != p)
        throw std::invalid_argument("PredictorExpr::evaluate: expected " + std::to_string(p) +
                                    " parameter values, got " + std::to_string(theta.size()));
    for (std::size_t c = 0; c < im.covariates.size(); ++c)
        if (im.covariate_used[c] && (c >= columns.size() || static_cast<Eigen::Index>(columns[c].size()) != n))
            throw DataError("covariate '" + im.covariates[c] + "' is missing or has the wrong length");

    const auto& sched = im.schedule[static_cast<std::size_t>(order)];
    std::vector<int> slot(im.graph.size(), -1);
    for (std::size_t s = 0; s < sched.size(); ++s)
        slot[static_cast<std::size_t>(sched[s])] = static_cast<int>(s);
    const auto un = static_cast<std::size_t>(n);
    std::vector<double> buf(sched.size() * un);
    const auto col = [&](int id) { return buf.data() + static_cast<std::size_t>(slot[id]) * un; };

    for (int id : sched) {
        const Node& nd = im.graph[id];
        double* out = col(id);
        switch (nd.op) {
        case Op::constant: std::fill(out, out + un, nd.value); break;
        case Op::parameter: std::fill(out, out + un, theta[static_cast<std::size_t>(nd.ref)]); break;
        case Op::covariate: {
            const auto& c = columns[static_cast<std::size_t>(nd.ref)];
            std::copy(c.begin(), c.end(), out);
            break;
        }
        case Op::negate: {
            const double* a = col(nd.lhs);
            for (std::size_t t = 0; t < un; ++t) out[t] = -a[t];
            break;
        }
        case Op::add: {
            const double* a = col(nd.lhs);
            const double* b = col(nd.rhs);
            for (std::size_t t = 0; t < un; ++t) out[t] = a[t] + b[t];
            break;
        }
        case Op::subtract: {
            const double* a = col(nd.lhs);
            const double* b = col(nd.rhs);
            for (std::size_t t = 0; t < un; ++t) out[t] = a[t] - b[t];
            break;
        }
        case Op::multiply: {
            const double* a = col(nd.lhs);
            const double* b = col(nd.rhs);
            for (std::size_t t = 0; t < un; ++t) out[t] = a[t] * b[t];
            break;
        }
        case Op::divide: {
            const double* a = col(nd.lhs);
            const double* b = col(nd.rhs);
            for (std::size_t t = 0; t < un; ++t) {
                if (b[t] == 0.0)
                    throw DomainError("division by zero in '" + im.source + "'", t + 1);
                out[t] = a[t] / b[t];
            }
            break;
        }
        case Op::exp: {
            const double* a = col(nd.lhs);
            for (std::size_t t = 0; t < un; ++t) out[t] = std::exp(a[t]);
            break;
        }
        case Op::log: {
            const double* a = col(nd.lhs);
            for (std::size_t t = 0; t < un; ++t) {
                if (!(a[t] > 0.0))
                    throw DomainError("log of a non-positive value in '" + im.source + "'", t + 1);
                out[t] = std::log(a[t]);
            }
            break;
        }
        case Op::power: {
            const double* a = col(nd.lhs);
            const double* b = col(nd.rhs);
            const bool param_exponent = im.graph[nd.rhs].depends_on_params;
            for (std::size_t t = 0; t < un; ++t) {
                if (a[t] <= 0.0) {
                    // a parameter-dependent exponent needs a positive base
                    bool undefined = param_exponent;
                    if (!undefined)
                        undefined = a[t] == 0.0 ? b[t] < 0.0 : b[t] != std::nearbyint(b[t]);
                    if (undefined)
                        throw DomainError("pow with base " + detail::format_number(a[t]) +
                                              " is undefined in '" + im.source + "'",
                                          t + 1);
                }
                out[t] = std::pow(a[t], b[t]);
            }
            break;
        }
        }
        for (std::size_t t = 0; t < un; ++t)
            if (!std::isfinite(out[t]))
                throw DomainError("non-finite value in '" + im.source + "'", t + 1);
    }

    DerivBundle res;
    res.value = Eigen::Map<const Eigen::VectorXd>(col(im.root), n);
    if (order == Order::value)
        return res;
    const auto ip = static_cast<Eigen::Index>(p);
    res.jac.resize(n, ip);
    for (std::size_t i = 0; i < p; ++i)
        res.jac.col(static_cast<Eigen::Index>(i)) = Eigen::Map<const Eigen::VectorXd>(col(im.jac[i]), n);
    if (order == Order::gradient)
        return res;
    res.hess = Array3(n, ip);
    for (std::size_t i = 0; i < p; ++i)
        for (std::size_t j = i; j < p; ++j) {
            const double* h = col(im.hess[index(i, j)]);
            for (Eigen::Index t = 0; t < n; ++t) {
                res.hess(t, static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h[t];
                res.hess(t, static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = h[t];
            }
        }
    return res;
}

/// Structural equality of two subtrees (possibly from different graphs).
inline bool structurally_equal(const PredictorExpr& a, int ia, const PredictorExpr& b, int ib) {
    const Node& x = a.graph()[ia];
    const Node& y = b.graph()[ib];
    if (x.op != y.op)
        return false;
    switch (x.op) {
    case Op::constant: return x.value == y.value;
    case Op::parameter:
        return a.params()[static_cast<std::size_t>(x.ref)] == b.params()[static_cast<std::size_t>(y.ref)];
    case Op::covariate:
        return a.covariates()[static_cast<std::size_t>(x.ref)] ==
               b.covariates()[static_cast<std::size_t>(y.ref)];
    default:
        if (!structurally_equal(a, x.lhs, b, y.lhs))
            return false;
        return x.rhs < 0 || structurally_equal(a, x.rhs, b, y.rhs);
    }
}

} // namespace evreg::formula
