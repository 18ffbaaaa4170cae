#pragma once

#include <memory>
#include <string>

namespace diamond {

// Scalar expression in the variables T (alias t), x, y, z, r = sqrt(x^2+y^2+z^2).
// Supports + - * / ^, unary minus, parentheses, numeric literals, and the
// functions sin cos tan sinh cosh tanh exp log sqrt abs atan.
class Expression {
public:
    static Expression parse(const std::string& text);

    double eval(double T, double x, double y, double z) const;
    const std::string& text() const { return text_; }

    Expression(const Expression&) = default;
    Expression& operator=(const Expression&) = default;

    struct Node;

private:
    Expression(std::shared_ptr<const Node> root, std::string text);
    std::shared_ptr<const Node> root_;
    std::string text_;
};

} // namespace diamond
