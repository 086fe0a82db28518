#pragma once

#include "hjsing/types.hpp"

#include <cctype>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

namespace hjsing {

/// Arithmetic expression compiled to a postfix program.
/// Supports + - * / ^, unary minus, pi, and the functions
/// sin cos tan exp log sqrt abs sinh cosh tanh.
class Expression {
public:
    Expression() = default;

    /// `slots` maps identifier names to indices of the argument array passed to eval().
    Expression(const std::string& text, const std::map<std::string, int>& slots)
        : text_(text), slots_(&slots) {
        pos_ = 0;
        parse_sum();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected character '" + std::string(1, text_[pos_]) + "'");
        slots_ = nullptr;
        int depth = 0, max_depth = 0;
        for (const Op& op : prog_) {
            if (op.code == Code::Const || op.code == Code::Var) ++depth;
            else if (op.code >= Code::Add && op.code <= Code::Pow) --depth;
            max_depth = std::max(max_depth, depth);
        }
        if (max_depth > 64) fail("expression nested too deeply");
    }

    double eval(const double* args) const {
        double stack[64];
        int top = 0;
        for (const Op& op : prog_) {
            switch (op.code) {
                case Code::Const: stack[top++] = op.value; break;
                case Code::Var: stack[top++] = args[op.slot]; break;
                case Code::Add: --top; stack[top - 1] += stack[top]; break;
                case Code::Sub: --top; stack[top - 1] -= stack[top]; break;
                case Code::Mul: --top; stack[top - 1] *= stack[top]; break;
                case Code::Div: --top; stack[top - 1] /= stack[top]; break;
                case Code::Pow: --top; stack[top - 1] = ipow_or_pow(stack[top - 1], stack[top]); break;
                case Code::Neg: stack[top - 1] = -stack[top - 1]; break;
                case Code::Sin: stack[top - 1] = std::sin(stack[top - 1]); break;
                case Code::Cos: stack[top - 1] = std::cos(stack[top - 1]); break;
                case Code::Tan: stack[top - 1] = std::tan(stack[top - 1]); break;
                case Code::Exp: stack[top - 1] = std::exp(stack[top - 1]); break;
                case Code::Log: stack[top - 1] = std::log(stack[top - 1]); break;
                case Code::Sqrt: stack[top - 1] = std::sqrt(stack[top - 1]); break;
                case Code::Abs: stack[top - 1] = std::fabs(stack[top - 1]); break;
                case Code::Sinh: stack[top - 1] = std::sinh(stack[top - 1]); break;
                case Code::Cosh: stack[top - 1] = std::cosh(stack[top - 1]); break;
                case Code::Tanh: stack[top - 1] = std::tanh(stack[top - 1]); break;
            }
        }
        return stack[0];
    }

    const std::string& text() const { return text_; }
    bool empty() const { return prog_.empty(); }

private:
    enum class Code { Const, Var, Add, Sub, Mul, Div, Pow, Neg, Sin, Cos, Tan, Exp, Log, Sqrt, Abs, Sinh, Cosh, Tanh };
    struct Op {
        Code code;
        double value = 0.0;
        int slot = 0;
    };

    static double ipow_or_pow(double a, double b) {
        if (b == 2.0) return a * a;
        if (b == 3.0) return a * a * a;
        return std::pow(a, b);
    }

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigError("expression '" + text_ + "': " + msg + " at position " + std::to_string(pos_));
    }

    void skip_ws() {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void emit(Code c) {
        prog_.push_back({c});
        if (prog_.size() > 4096) fail("expression too long");
    }

    void parse_sum() {
        parse_product();
        for (;;) {
            if (accept('+')) {
                parse_product();
                emit(Code::Add);
            } else if (accept('-')) {
                parse_product();
                emit(Code::Sub);
            } else {
                return;
            }
        }
    }

    void parse_product() {
        parse_unary();
        for (;;) {
            if (accept('*')) {
                parse_unary();
                emit(Code::Mul);
            } else if (accept('/')) {
                parse_unary();
                emit(Code::Div);
            } else {
                return;
            }
        }
    }

    void parse_unary() {
        if (accept('-')) {
            parse_unary();
            emit(Code::Neg);
            return;
        }
        if (accept('+')) {
            parse_unary();
            return;
        }
        parse_power();
    }

    void parse_power() {
        parse_primary();
        if (accept('^')) {
            parse_unary();
            emit(Code::Pow);
        }
    }

    void parse_primary() {
        skip_ws();
        if (pos_ >= text_.size()) fail("unexpected end");
        char c = text_[pos_];
        if (c == '(') {
            ++pos_;
            parse_sum();
            if (!accept(')')) fail("missing ')'");
            return;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const char* begin = text_.c_str() + pos_;
            char* end = nullptr;
            double v = std::strtod(begin, &end);
            if (end == begin) fail("bad number");
            pos_ += static_cast<std::size_t>(end - begin);
            prog_.push_back({Code::Const, v});
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < text_.size() &&
                   (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
                ++pos_;
            std::string name = text_.substr(start, pos_ - start);
            static const std::map<std::string, Code> functions = {
                {"sin", Code::Sin},   {"cos", Code::Cos},   {"tan", Code::Tan},   {"exp", Code::Exp},
                {"log", Code::Log},   {"sqrt", Code::Sqrt}, {"abs", Code::Abs},   {"sinh", Code::Sinh},
                {"cosh", Code::Cosh}, {"tanh", Code::Tanh}};
            auto f = functions.find(name);
            if (f != functions.end()) {
                if (!accept('(')) fail("expected '(' after " + name);
                parse_sum();
                if (!accept(')')) fail("missing ')'");
                emit(f->second);
                return;
            }
            if (name == "pi") {
                prog_.push_back({Code::Const, std::numbers::pi});
                return;
            }
            auto s = slots_->find(name);
            if (s == slots_->end()) fail("unknown identifier '" + name + "'");
            prog_.push_back({Code::Var, 0.0, s->second});
            return;
        }
        fail("unexpected character '" + std::string(1, c) + "'");
    }

    std::string text_;
    const std::map<std::string, int>* slots_ = nullptr;
    std::size_t pos_ = 0;
    std::vector<Op> prog_;
};

}  // namespace hjsing
