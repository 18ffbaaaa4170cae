#include "diamond/expression.hpp"

#include "diamond/geometry.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <vector>

namespace diamond {

namespace {

enum class Op { num, var, add, sub, mul, div, pow, neg, call };

} // namespace

struct Expression::Node {
    Op op;
    double value = 0.0;                  // num
    int var_index = 0;                   // var: 0=T 1=x 2=y 3=z 4=r
    double (*fn)(double) = nullptr;      // call
    std::shared_ptr<const Node> a, b;
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;

struct Parser {
    const std::string& s;
    size_t pos = 0;

    explicit Parser(const std::string& text) : s(text) {}

    void skip() {
        while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    }

    bool eat(char c) {
        skip();
        if (pos < s.size() && s[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    char peek() {
        skip();
        return pos < s.size() ? s[pos] : '\0';
    }

    [[noreturn]] void fail(const std::string& what) {
        throw error(errc::config, "expression parse error at position " +
                                      std::to_string(pos) + ": " + what + " in \"" + s + "\"");
    }

    NodePtr make(Op op, NodePtr a = nullptr, NodePtr b = nullptr) {
        auto n = std::make_shared<Expression::Node>();
        n->op = op;
        n->a = std::move(a);
        n->b = std::move(b);
        return n;
    }

    NodePtr expr() {
        NodePtr lhs = term();
        while (true) {
            if (eat('+')) {
                lhs = make(Op::add, lhs, term());
            } else if (eat('-')) {
                lhs = make(Op::sub, lhs, term());
            } else {
                return lhs;
            }
        }
    }

    NodePtr term() {
        NodePtr lhs = factor();
        while (true) {
            if (eat('*')) {
                lhs = make(Op::mul, lhs, factor());
            } else if (eat('/')) {
                lhs = make(Op::div, lhs, factor());
            } else {
                return lhs;
            }
        }
    }

    NodePtr factor() {
        if (eat('-')) return make(Op::neg, factor());
        if (eat('+')) return factor();
        return power();
    }

    NodePtr power() {
        NodePtr base = atom();
        if (eat('^')) return make(Op::pow, base, factor());
        return base;
    }

    NodePtr atom() {
        skip();
        if (pos >= s.size()) fail("unexpected end of input");
        char c = s[pos];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
        if (c == '(') {
            ++pos;
            NodePtr inner = expr();
            if (!eat(')')) fail("expected ')'");
            return inner;
        }
        fail(std::string("unexpected character '") + c + "'");
    }

    NodePtr number() {
        skip();
        const char* begin = s.c_str() + pos;
        char* end = nullptr;
        double v = std::strtod(begin, &end);
        if (end == begin) fail("bad numeric literal");
        pos += static_cast<size_t>(end - begin);
        auto n = make(Op::num);
        const_cast<Expression::Node&>(*n).value = v;
        return n;
    }

    NodePtr identifier() {
        skip();
        size_t start = pos;
        while (pos < s.size() &&
               (std::isalnum(static_cast<unsigned char>(s[pos])) || s[pos] == '_'))
            ++pos;
        std::string name = s.substr(start, pos - start);

        static const struct {
            const char* name;
            double (*fn)(double);
        } fns[] = {
            {"sin", std::sin},   {"cos", std::cos},   {"tan", std::tan},
            {"sinh", std::sinh}, {"cosh", std::cosh}, {"tanh", std::tanh},
            {"exp", std::exp},   {"log", std::log},   {"sqrt", std::sqrt},
            {"abs", std::fabs},  {"atan", std::atan},
        };
        for (const auto& f : fns) {
            if (name == f.name) {
                if (!eat('(')) fail("expected '(' after function " + name);
                NodePtr arg = expr();
                if (!eat(')')) fail("expected ')'");
                auto n = make(Op::call, arg);
                const_cast<Expression::Node&>(*n).fn = f.fn;
                return n;
            }
        }

        int idx = -1;
        if (name == "T" || name == "t") idx = 0;
        else if (name == "x") idx = 1;
        else if (name == "y") idx = 2;
        else if (name == "z") idx = 3;
        else if (name == "r") idx = 4;
        else if (name == "pi") {
            auto n = make(Op::num);
            const_cast<Expression::Node&>(*n).value = M_PI;
            return n;
        }
        if (idx < 0) fail("unknown identifier '" + name + "'");
        auto n = make(Op::var);
        const_cast<Expression::Node&>(*n).var_index = idx;
        return n;
    }
};

double eval_node(const Expression::Node& n, const double v[5]) {
    switch (n.op) {
        case Op::num: return n.value;
        case Op::var: return v[n.var_index];
        case Op::add: return eval_node(*n.a, v) + eval_node(*n.b, v);
        case Op::sub: return eval_node(*n.a, v) - eval_node(*n.b, v);
        case Op::mul: return eval_node(*n.a, v) * eval_node(*n.b, v);
        case Op::div: return eval_node(*n.a, v) / eval_node(*n.b, v);
        case Op::pow: return std::pow(eval_node(*n.a, v), eval_node(*n.b, v));
        case Op::neg: return -eval_node(*n.a, v);
        case Op::call: return n.fn(eval_node(*n.a, v));
    }
    return 0.0;
}

} // namespace

Expression::Expression(std::shared_ptr<const Node> root, std::string text)
    : root_(std::move(root)), text_(std::move(text)) {}

Expression Expression::parse(const std::string& text) {
    Parser p(text);
    NodePtr root = p.expr();
    p.skip();
    if (p.pos != text.size()) p.fail("trailing input");
    return Expression(root, text);
}

double Expression::eval(double T, double x, double y, double z) const {
    const double v[5] = {T, x, y, z, std::sqrt(x * x + y * y + z * z)};
    return eval_node(*root_, v);
}

} // namespace diamond
