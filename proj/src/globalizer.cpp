#include "nsc/globalizer.hpp"

#include "nsc/error.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>
#include <unordered_set>

namespace nsc::glob
{
    namespace
    {
        const std::unordered_set<std::string_view> kKeywords = {
            "auto", "break", "case", "char", "const", "continue", "default", "do", "double", "else", "enum",
            "extern", "float", "for", "goto", "if", "inline", "int", "long", "register", "restrict", "return",
            "short", "signed", "sizeof", "static", "struct", "switch", "typedef", "union", "unsigned", "void",
            "volatile", "while", "_Alignas", "_Alignof", "_Atomic", "_Bool", "_Complex", "_Generic", "_Imaginary",
            "_Noreturn", "_Static_assert", "_Thread_local",
            // GNU spellings found in preprocessed system headers.
            "__attribute__", "__attribute", "__extension__", "__inline", "__inline__", "__restrict",
            "__restrict__", "__const", "__volatile__", "__signed__", "__typeof__", "__typeof", "typeof", "__asm__",
            "__asm", "asm", "__thread", "__label__", "__int128", "__builtin_va_list", "__declspec", "__alignof__",
        };

        const std::unordered_set<std::string_view> kStorage = {"typedef", "extern", "static", "auto", "register",
                                                               "_Thread_local", "__thread"};
        const std::unordered_set<std::string_view> kQualifiers = {
            "const",  "__const",  "volatile",   "__volatile__", "restrict",  "__restrict", "__restrict__",
            "inline", "__inline", "__inline__", "_Noreturn",    "__extension__"};
        const std::unordered_set<std::string_view> kTypeWords = {
            "void",   "char",     "short",   "int",      "long",      "float",    "double",
            "signed", "unsigned", "_Bool",   "_Complex", "_Imaginary", "__signed__", "__int128",
            "__builtin_va_list"};
        const std::unordered_set<std::string_view> kAttributeLike = {"__attribute__", "__attribute", "__declspec",
                                                                     "_Alignas", "__asm__", "__asm", "asm"};
        const std::unordered_set<std::string_view> kTypeof = {"typeof", "__typeof__", "__typeof"};

        const char *const kPunctuators[] = {
            "...", "<<=", ">>=", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
            "*=",  "/=",  "%=",  "+=", "-=", "&=", "^=", "|=", "##",
        };

        bool ident_start(char c)
        {
            return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_' || c == '$';
        }

        bool ident_char(char c)
        {
            return ident_start(c) || (c >= '0' && c <= '9');
        }

        bool digit(char c)
        {
            return c >= '0' && c <= '9';
        }

        std::string where(std::uint32_t line, std::uint32_t col)
        {
            return std::to_string(line) + ":" + std::to_string(col);
        }
    }

    const char *token_kind_name(TokenKind kind) noexcept
    {
        switch (kind)
        {
        case TokenKind::Identifier: return "identifier";
        case TokenKind::Keyword: return "keyword";
        case TokenKind::Number: return "number";
        case TokenKind::String: return "string";
        case TokenKind::Char: return "char";
        case TokenKind::Punctuator: return "punctuator";
        case TokenKind::Whitespace: return "whitespace";
        case TokenKind::Comment: return "comment";
        }
        return "?";
    }

    bool is_keyword(std::string_view word)
    {
        return kKeywords.count(word) != 0;
    }

    // Tokenizer --------------------------------------------------------------

    std::vector<Token> tokenize(std::string_view src, std::vector<Diagnostic> *diagnostics)
    {
        std::vector<Token> out;
        std::size_t i = 0;
        std::uint32_t line = 1, col = 1;
        bool line_start = true;

        auto advance_pos = [&](std::string_view text) {
            for (char c : text)
            {
                if (c == '\n')
                {
                    ++line;
                    col = 1;
                }
                else
                {
                    ++col;
                }
            }
        };
        auto emit = [&](TokenKind kind, std::size_t len) {
            Token t{kind, std::string(src.substr(i, len)), line, col};
            advance_pos(t.text);
            i += len;
            out.push_back(std::move(t));
        };

        while (i < src.size())
        {
            const char c = src[i];
            if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v')
            {
                std::size_t j = i;
                while (j < src.size() && (src[j] == ' ' || src[j] == '\t' || src[j] == '\n' || src[j] == '\r' ||
                                          src[j] == '\f' || src[j] == '\v'))
                {
                    if (src[j] == '\n')
                    {
                        line_start = true;
                    }
                    ++j;
                }
                emit(TokenKind::Whitespace, j - i);
                continue;
            }
            if (c == '#' && line_start)
            {
                std::size_t j = i;
                while (j < src.size() && src[j] != '\n')
                {
                    ++j;
                }
                std::size_t k = i + 1;
                while (k < j && (src[k] == ' ' || src[k] == '\t'))
                {
                    ++k;
                }
                const bool marker = (k < j && digit(src[k])) || src.substr(k, 4) == "line";
                if (!marker && diagnostics)
                {
                    std::size_t e = k;
                    while (e < j && ident_char(src[e]))
                    {
                        ++e;
                    }
                    diagnostics->push_back({Diagnostic::Kind::Directive, "#" + std::string(src.substr(k, e - k)),
                                            "preprocessor directive passed through", line, col});
                }
                emit(TokenKind::Whitespace, j - i);
                continue;
            }
            line_start = false;

            if (c == '/' && i + 1 < src.size() && src[i + 1] == '/')
            {
                std::size_t j = i;
                while (j < src.size() && src[j] != '\n')
                {
                    ++j;
                }
                emit(TokenKind::Comment, j - i);
                continue;
            }
            if (c == '/' && i + 1 < src.size() && src[i + 1] == '*')
            {
                const auto end = src.find("*/", i + 2);
                if (end == std::string_view::npos)
                {
                    throw Error(Errc::UnterminatedComment, "comment opened at " + where(line, col));
                }
                emit(TokenKind::Comment, end + 2 - i);
                continue;
            }

            // Encoding prefixes glue onto the literal.
            std::size_t prefix = 0;
            if (c == 'L' || c == 'U')
            {
                prefix = 1;
            }
            else if (c == 'u')
            {
                prefix = (i + 1 < src.size() && src[i + 1] == '8') ? 2 : 1;
            }
            if (prefix && i + prefix < src.size() && (src[i + prefix] == '"' || src[i + prefix] == '\''))
            {
                // fall through to literal scanning below with the prefix included
            }
            else
            {
                prefix = 0;
            }
            const char q = src[i + prefix];
            if (q == '"' || q == '\'')
            {
                std::size_t j = i + prefix + 1;
                bool closed = false;
                while (j < src.size() && src[j] != '\n')
                {
                    if (src[j] == '\\' && j + 1 < src.size())
                    {
                        j += 2;
                        continue;
                    }
                    if (src[j] == q)
                    {
                        closed = true;
                        ++j;
                        break;
                    }
                    ++j;
                }
                if (!closed)
                {
                    throw Error(Errc::UnterminatedString,
                                std::string(q == '"' ? "string" : "character constant") + " opened at " +
                                    where(line, col));
                }
                emit(q == '"' ? TokenKind::String : TokenKind::Char, j - i);
                continue;
            }

            if (ident_start(c))
            {
                std::size_t j = i;
                while (j < src.size() && ident_char(src[j]))
                {
                    ++j;
                }
                emit(is_keyword(src.substr(i, j - i)) ? TokenKind::Keyword : TokenKind::Identifier, j - i);
                continue;
            }
            if (digit(c) || (c == '.' && i + 1 < src.size() && digit(src[i + 1])))
            {
                std::size_t j = i + 1;
                while (j < src.size())
                {
                    const char d = src[j];
                    if ((d == '+' || d == '-') &&
                        (src[j - 1] == 'e' || src[j - 1] == 'E' || src[j - 1] == 'p' || src[j - 1] == 'P'))
                    {
                        ++j;
                    }
                    else if (ident_char(d) || d == '.')
                    {
                        ++j;
                    }
                    else
                    {
                        break;
                    }
                }
                emit(TokenKind::Number, j - i);
                continue;
            }
            std::size_t len = 1;
            for (const char *p : kPunctuators)
            {
                const std::string_view ps(p);
                if (src.substr(i, ps.size()) == ps)
                {
                    len = ps.size();
                    break;
                }
            }
            emit(TokenKind::Punctuator, len);
        }
        return out;
    }

    // Walker -----------------------------------------------------------------

    namespace
    {
        enum class BindKind
        {
            Local,
            FileObject,
            Virtual,
            Typedef,
        };

        struct Binding
        {
            BindKind kind = BindKind::Local;
            std::string new_name;
        };

        struct Reference
        {
            std::size_t token = 0;
            std::string name;
            std::string new_name;
            /// Index into Walker::decls of the static-storage declaration whose
            /// initializer contains this reference.
            std::optional<std::size_t> in_static_init;
        };

        struct Spec
        {
            std::size_t begin = 0, end = 0;
            bool is_typedef = false, is_static = false, is_extern = false, is_const = false, has_type = false;
            bool has_body = false;
        };

        struct Declarator
        {
            std::optional<std::size_t> name;
            std::size_t begin = 0, end = 0;
            int pointer_depth = 0;
            bool last_ptr_const = false;
            bool is_function = false;
            std::vector<std::string> params;
            std::vector<std::pair<std::size_t, std::size_t>> dims;
            bool incomplete = false;
        };

        enum class Ctx
        {
            File,
            Block,
            Param,
        };

        class Walker
        {
        public:
            Walker(const std::vector<Token> &tokens, const std::map<std::string, std::string> &file_virtual,
                   const std::map<std::size_t, std::string> &static_virtual)
                : t_(tokens), file_virtual_(file_virtual), static_virtual_(static_virtual)
            {
                for (std::size_t i = 0; i < t_.size(); ++i)
                {
                    if (t_[i].significant())
                    {
                        s_.push_back(i);
                    }
                }
                scopes_.emplace_back();
            }

            void run()
            {
                while (p_ < s_.size())
                {
                    const std::size_t before = p_;
                    if (at(";"))
                    {
                        ++p_;
                        continue;
                    }
                    declaration(Ctx::File);
                    if (p_ == before)
                    {
                        ambiguity("unexpected token");
                        ++p_;
                    }
                }
            }

            std::vector<Declaration> decls;
            std::vector<Reference> refs;
            std::vector<Diagnostic> diags;

        private:
            const Token &tk(std::size_t k) const { return t_[s_[k]]; }

            bool at(std::string_view text, std::size_t off = 0) const
            {
                return p_ + off < s_.size() && tk(p_ + off).text == text &&
                       tk(p_ + off).kind != TokenKind::String && tk(p_ + off).kind != TokenKind::Char;
            }

            bool ident(std::size_t off = 0) const
            {
                return p_ + off < s_.size() && tk(p_ + off).kind == TokenKind::Identifier;
            }

            bool keyword_in(const std::unordered_set<std::string_view> &set, std::size_t off = 0) const
            {
                return p_ + off < s_.size() && tk(p_ + off).kind == TokenKind::Keyword &&
                       set.count(tk(p_ + off).text) != 0;
            }

            std::size_t tok_index(std::size_t k) const { return k < s_.size() ? s_[k] : t_.size(); }

            void ambiguity(const std::string &what)
            {
                const Token &x = p_ < s_.size() ? tk(p_) : t_.back();
                diags.push_back({Diagnostic::Kind::ParseAmbiguity, x.text, what, x.line, x.col});
            }

            void expect(std::string_view text)
            {
                if (at(text))
                {
                    ++p_;
                }
                else
                {
                    ambiguity("expected '" + std::string(text) + "'");
                }
            }

            const Binding *resolve(const std::string &name) const
            {
                for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it)
                {
                    const auto f = it->find(name);
                    if (f != it->end())
                    {
                        return &f->second;
                    }
                }
                return nullptr;
            }

            bool is_typedef_name(std::size_t off = 0) const
            {
                if (!ident(off))
                {
                    return false;
                }
                const Binding *b = resolve(tk(p_ + off).text);
                return b && b->kind == BindKind::Typedef;
            }

            void bind(const std::string &name, Binding b) { scopes_.back()[name] = std::move(b); }

            void skip_balanced()
            {
                int depth = 0;
                while (p_ < s_.size())
                {
                    const std::string &x = tk(p_).text;
                    const bool lit = tk(p_).kind == TokenKind::String || tk(p_).kind == TokenKind::Char;
                    ++p_;
                    if (lit)
                    {
                        continue;
                    }
                    if (x == "(" || x == "[" || x == "{")
                    {
                        ++depth;
                    }
                    else if (x == ")" || x == "]" || x == "}")
                    {
                        if (--depth <= 0)
                        {
                            return;
                        }
                    }
                }
            }

            void skip_to_semicolon()
            {
                int depth = 0;
                while (p_ < s_.size())
                {
                    if (depth == 0 && at(";"))
                    {
                        ++p_;
                        return;
                    }
                    if (depth == 0 && at("}"))
                    {
                        return;
                    }
                    if (at("(") || at("[") || at("{"))
                    {
                        ++depth;
                    }
                    else if (at(")") || at("]") || at("}"))
                    {
                        --depth;
                    }
                    ++p_;
                }
            }

            void reference(std::size_t k)
            {
                if (k > 0 && (tk(k - 1).text == "." || tk(k - 1).text == "->"))
                {
                    return;
                }
                const std::string &name = tk(k).text;
                std::string new_name;
                if (const Binding *b = resolve(name))
                {
                    if (b->kind == BindKind::Virtual)
                    {
                        new_name = b->new_name;
                    }
                    else if (b->kind == BindKind::FileObject)
                    {
                        const auto f = file_virtual_.find(name);
                        if (f != file_virtual_.end())
                        {
                            new_name = f->second;
                        }
                    }
                }
                else if (const auto f = file_virtual_.find(name); f != file_virtual_.end())
                {
                    new_name = f->second;
                }
                if (!new_name.empty())
                {
                    refs.push_back({s_[k], name, new_name, static_init_owner_});
                }
            }

            /// Scans an expression up to an unnested token in `stops` (or an
            /// unmatched closer), recording references.
            void expression(std::initializer_list<std::string_view> stops)
            {
                int depth = 0;
                int ternary = 0;
                while (p_ < s_.size())
                {
                    const Token &x = tk(p_);
                    const bool lit = x.kind == TokenKind::String || x.kind == TokenKind::Char;
                    if (!lit && depth == 0)
                    {
                        if (x.text == ":" && ternary > 0)
                        {
                            --ternary;
                            ++p_;
                            continue;
                        }
                        if (std::find(stops.begin(), stops.end(), x.text) != stops.end())
                        {
                            return;
                        }
                    }
                    if (lit)
                    {
                        ++p_;
                        continue;
                    }
                    if (x.text == "(" && at("{", 1))
                    {
                        // Statement expression.
                        ++p_;
                        block();
                        expect(")");
                        continue;
                    }
                    if (x.text == "(" || x.text == "[" || x.text == "{")
                    {
                        ++depth;
                        ++p_;
                        continue;
                    }
                    if (x.text == ")" || x.text == "]" || x.text == "}")
                    {
                        if (depth == 0)
                        {
                            return;
                        }
                        --depth;
                        ++p_;
                        continue;
                    }
                    if (x.text == "?" && depth == 0)
                    {
                        ++ternary;
                    }
                    if (x.kind == TokenKind::Keyword &&
                        (x.text == "struct" || x.text == "union" || x.text == "enum"))
                    {
                        ++p_;
                        if (ident())
                        {
                            ++p_;
                        }
                        if (at("{"))
                        {
                            skip_balanced();
                        }
                        continue;
                    }
                    if (x.kind == TokenKind::Identifier)
                    {
                        reference(p_);
                    }
                    ++p_;
                }
            }

            /// Scans a parenthesized group as an expression.
            void paren_expression()
            {
                if (!at("("))
                {
                    return;
                }
                ++p_;
                expression({")"});
                expect(")");
            }

            void enum_body()
            {
                ++p_; // {
                while (p_ < s_.size() && !at("}"))
                {
                    if (ident())
                    {
                        bind(tk(p_).text, {BindKind::Local, {}});
                        ++p_;
                        if (at("="))
                        {
                            ++p_;
                            expression({",", "}"});
                        }
                    }
                    if (at(","))
                    {
                        ++p_;
                    }
                    else if (!at("}"))
                    {
                        ambiguity("unexpected token in enum");
                        skip_balanced();
                        return;
                    }
                }
                expect("}");
            }

            Spec specifiers()
            {
                Spec sp;
                sp.begin = p_;
                while (p_ < s_.size())
                {
                    const Token &x = tk(p_);
                    if (x.kind == TokenKind::Keyword)
                    {
                        if (kStorage.count(x.text))
                        {
                            sp.is_typedef |= x.text == "typedef";
                            sp.is_static |= x.text == "static";
                            sp.is_extern |= x.text == "extern";
                            ++p_;
                            continue;
                        }
                        if (kQualifiers.count(x.text))
                        {
                            sp.is_const |= x.text == "const" || x.text == "__const";
                            ++p_;
                            continue;
                        }
                        if (x.text == "_Atomic")
                        {
                            ++p_;
                            if (at("("))
                            {
                                skip_balanced();
                                sp.has_type = true;
                            }
                            continue;
                        }
                        if (kTypeWords.count(x.text))
                        {
                            sp.has_type = true;
                            ++p_;
                            continue;
                        }
                        if (x.text == "struct" || x.text == "union" || x.text == "enum")
                        {
                            const bool is_enum = x.text == "enum";
                            ++p_;
                            while (keyword_in(kAttributeLike))
                            {
                                ++p_;
                                skip_balanced();
                            }
                            if (ident())
                            {
                                ++p_;
                            }
                            if (at("{"))
                            {
                                sp.has_body = true;
                                if (is_enum)
                                {
                                    enum_body();
                                }
                                else
                                {
                                    skip_balanced();
                                }
                            }
                            sp.has_type = true;
                            continue;
                        }
                        if (kAttributeLike.count(x.text))
                        {
                            ++p_;
                            if (at("("))
                            {
                                skip_balanced();
                            }
                            continue;
                        }
                        if (kTypeof.count(x.text))
                        {
                            ++p_;
                            paren_expression();
                            sp.has_type = true;
                            continue;
                        }
                        break;
                    }
                    if (x.kind == TokenKind::Identifier && !sp.has_type)
                    {
                        sp.has_type = true;
                        ++p_;
                        continue;
                    }
                    break;
                }
                sp.end = p_;
                return sp;
            }

            std::vector<std::string> params()
            {
                std::vector<std::string> names;
                ++p_; // (
                scopes_.emplace_back();
                while (p_ < s_.size() && !at(")"))
                {
                    const std::size_t before = p_;
                    if (at("..."))
                    {
                        ++p_;
                    }
                    else if (ident() && (at(",", 1) || at(")", 1)) && !is_typedef_name())
                    {
                        // K&R identifier list.
                        names.push_back(tk(p_).text);
                        ++p_;
                    }
                    else
                    {
                        specifiers();
                        Declarator d = declarator();
                        if (d.name)
                        {
                            names.push_back(tk(*d.name).text);
                            bind(tk(*d.name).text, {BindKind::Local, {}});
                        }
                    }
                    if (at(","))
                    {
                        ++p_;
                    }
                    else if (!at(")"))
                    {
                        ambiguity("unexpected token in parameter list");
                        int depth = 1;
                        while (p_ < s_.size() && depth > 0)
                        {
                            if (at("("))
                            {
                                ++depth;
                            }
                            else if (at(")") && --depth == 0)
                            {
                                break;
                            }
                            ++p_;
                        }
                    }
                    if (p_ == before)
                    {
                        ++p_;
                    }
                }
                expect(")");
                scopes_.pop_back();
                return names;
            }

            Declarator declarator()
            {
                Declarator d;
                d.begin = p_;
                while (at("*") || at("^"))
                {
                    ++p_;
                    ++d.pointer_depth;
                    d.last_ptr_const = false;
                    while (keyword_in(kQualifiers) || keyword_in(kAttributeLike) || at("_Atomic"))
                    {
                        if (at("const") || at("__const"))
                        {
                            d.last_ptr_const = true;
                        }
                        if (keyword_in(kAttributeLike))
                        {
                            ++p_;
                            if (at("("))
                            {
                                skip_balanced();
                            }
                            continue;
                        }
                        ++p_;
                    }
                }
                bool direct = false;
                if (ident())
                {
                    d.name = p_;
                    ++p_;
                    direct = true;
                }
                else if (at("(") && (at("*", 1) || at("^", 1) || at("(", 1) || at("[", 1) ||
                                     (ident(1) && !is_typedef_name(1))))
                {
                    ++p_;
                    Declarator inner = declarator();
                    expect(")");
                    d.name = inner.name;
                    d.is_function = inner.is_function;
                    d.params = std::move(inner.params);
                    d.pointer_depth += inner.pointer_depth;
                    d.last_ptr_const = inner.pointer_depth ? inner.last_ptr_const : d.last_ptr_const;
                    d.dims = std::move(inner.dims);
                    d.incomplete = inner.incomplete;
                }
                bool first_suffix = true;
                while (p_ < s_.size())
                {
                    if (at("["))
                    {
                        const std::size_t open = p_;
                        ++p_;
                        if (direct && d.dims.empty() && at("]"))
                        {
                            d.incomplete = true;
                        }
                        expression({"]"});
                        if (direct)
                        {
                            d.dims.emplace_back(s_[open], tok_index(p_) + 1);
                        }
                        expect("]");
                    }
                    else if (at("("))
                    {
                        auto names = params();
                        if (direct && first_suffix)
                        {
                            d.is_function = true;
                            d.params = std::move(names);
                        }
                    }
                    else
                    {
                        break;
                    }
                    first_suffix = false;
                }
                while (keyword_in(kAttributeLike))
                {
                    ++p_;
                    if (at("("))
                    {
                        skip_balanced();
                    }
                }
                d.end = p_;
                return d;
            }

            bool declaration_start() const
            {
                if (p_ >= s_.size())
                {
                    return false;
                }
                const Token &x = tk(p_);
                if (x.kind == TokenKind::Keyword)
                {
                    return kStorage.count(x.text) || kQualifiers.count(x.text) || kTypeWords.count(x.text) ||
                           kTypeof.count(x.text) || x.text == "struct" || x.text == "union" || x.text == "enum" ||
                           x.text == "_Static_assert" || x.text == "__label__" || x.text == "_Atomic" ||
                           x.text == "__attribute__" || x.text == "__attribute" || x.text == "_Alignas";
                }
                if (x.kind != TokenKind::Identifier || at(":", 1))
                {
                    return false;
                }
                if (const Binding *b = resolve(x.text))
                {
                    return b->kind == BindKind::Typedef;
                }
                if (file_virtual_.count(x.text))
                {
                    return false;
                }
                return ident(1) || (p_ + 1 < s_.size() && tk(p_ + 1).kind == TokenKind::Keyword &&
                                    kQualifiers.count(tk(p_ + 1).text));
            }

            void declaration(Ctx ctx)
            {
                const std::size_t stmt_begin = p_;
                if (at("_Static_assert"))
                {
                    ++p_;
                    paren_expression();
                    expect(";");
                    return;
                }
                if (at("__label__"))
                {
                    skip_to_semicolon();
                    return;
                }
                const Spec sp = specifiers();
                if (at(";"))
                {
                    ++p_;
                    return;
                }
                std::vector<std::size_t> recorded;
                for (;;)
                {
                    const std::size_t before = p_;
                    Declarator d = declarator();
                    if (!d.name)
                    {
                        if (p_ == before)
                        {
                            ambiguity("declaration without a declarator");
                            skip_to_semicolon();
                            return;
                        }
                        ambiguity("abstract declarator in declaration");
                    }
                    std::optional<std::size_t> decl_index;
                    if (d.name)
                    {
                        const std::string name = tk(*d.name).text;
                        if (sp.is_typedef)
                        {
                            bind(name, {BindKind::Typedef, {}});
                        }
                        else if (d.is_function)
                        {
                            bind(name, {ctx == Ctx::File ? BindKind::FileObject : BindKind::Local, {}});
                        }
                        else
                        {
                            const bool block = ctx == Ctx::Block;
                            const bool record = ctx == Ctx::File || (block && (sp.is_static || sp.is_extern));
                            if (record)
                            {
                                Declaration dc;
                                dc.name = name;
                                dc.name_token = s_[*d.name];
                                dc.spec_begin = tok_index(sp.begin);
                                dc.spec_end = tok_index(sp.end);
                                dc.declarator_begin = tok_index(d.begin);
                                dc.declarator_end = tok_index(d.end - 1) + 1;
                                dc.pointer_depth = d.pointer_depth;
                                dc.dims = d.dims;
                                dc.incomplete_array = d.incomplete;
                                dc.storage = sp.is_static ? Storage::Static
                                                          : (sp.is_extern ? Storage::Extern : Storage::None);
                                dc.scope = (block && sp.is_static) ? DeclScope::FunctionStatic : DeclScope::File;
                                dc.function = block && sp.is_static ? function_ : std::string{};
                                dc.function_begin = function_begin_;
                                dc.statement_begin = tok_index(stmt_begin);
                                dc.const_object = d.pointer_depth == 0 ? sp.is_const : d.last_ptr_const;
                                dc.type_defined_inline = sp.has_body;
                                dc.line = tk(*d.name).line;
                                dc.col = tk(*d.name).col;
                                decl_index = decls.size();
                                recorded.push_back(decls.size());
                                decls.push_back(std::move(dc));
                            }
                            if (ctx == Ctx::File)
                            {
                                bind(name, {BindKind::FileObject, {}});
                            }
                            else if (block && sp.is_static)
                            {
                                const auto f = static_virtual_.find(s_[*d.name]);
                                bind(name, f != static_virtual_.end() ? Binding{BindKind::Virtual, f->second}
                                                                      : Binding{BindKind::Local, {}});
                            }
                            else if (block && sp.is_extern)
                            {
                                const auto f = file_virtual_.find(name);
                                bind(name, f != file_virtual_.end() ? Binding{BindKind::Virtual, f->second}
                                                                    : Binding{BindKind::Local, {}});
                            }
                            else
                            {
                                bind(name, {BindKind::Local, {}});
                            }
                        }
                    }
                    if (at("="))
                    {
                        ++p_;
                        const std::size_t init_begin = p_;
                        const bool static_storage = ctx == Ctx::File || sp.is_static;
                        if (static_storage && decl_index)
                        {
                            static_init_owner_ = decl_index;
                        }
                        else if (static_storage)
                        {
                            static_init_owner_ = std::numeric_limits<std::size_t>::max();
                        }
                        expression({",", ";"});
                        static_init_owner_.reset();
                        if (decl_index)
                        {
                            const std::size_t b = tok_index(init_begin);
                            const std::size_t e = tok_index(p_ - 1) + 1;
                            decls[*decl_index].initializer = std::make_pair(b, e);
                        }
                    }
                    if (d.is_function && ctx == Ctx::File && d.name && !at(";") && !at(","))
                    {
                        function_definition(d, stmt_begin);
                        return;
                    }
                    if (at(","))
                    {
                        ++p_;
                        continue;
                    }
                    if (at(";"))
                    {
                        for (std::size_t r : recorded)
                        {
                            decls[r].statement_end = s_[p_];
                        }
                        ++p_;
                        return;
                    }
                    ambiguity("cannot classify declaration");
                    for (std::size_t r : recorded)
                    {
                        decls[r].statement_end = tok_index(p_);
                    }
                    skip_to_semicolon();
                    return;
                }
            }

            void function_definition(const Declarator &d, std::size_t begin)
            {
                function_ = tk(*d.name).text;
                function_begin_ = s_[begin];
                scopes_.emplace_back();
                for (const auto &n : d.params)
                {
                    bind(n, {BindKind::Local, {}});
                }
                while (p_ < s_.size() && !at("{"))
                {
                    // K&R parameter declarations.
                    const std::size_t before = p_;
                    declaration(Ctx::Block);
                    if (p_ == before)
                    {
                        ambiguity("unexpected token before function body");
                        ++p_;
                    }
                }
                block();
                scopes_.pop_back();
                function_.clear();
            }

            void block()
            {
                if (!at("{"))
                {
                    ambiguity("expected '{'");
                    return;
                }
                ++p_;
                scopes_.emplace_back();
                while (p_ < s_.size() && !at("}"))
                {
                    const std::size_t before = p_;
                    if (declaration_start())
                    {
                        declaration(Ctx::Block);
                    }
                    else
                    {
                        statement();
                    }
                    if (p_ == before)
                    {
                        ambiguity("unexpected token in block");
                        ++p_;
                    }
                }
                expect("}");
                scopes_.pop_back();
            }

            void statement()
            {
                if (p_ >= s_.size())
                {
                    return;
                }
                if (at("{"))
                {
                    block();
                    return;
                }
                if (at(";"))
                {
                    ++p_;
                    return;
                }
                const Token &x = tk(p_);
                if (x.kind == TokenKind::Keyword)
                {
                    if (x.text == "if" || x.text == "while" || x.text == "switch")
                    {
                        const bool is_if = x.text == "if";
                        ++p_;
                        paren_expression();
                        statement();
                        if (is_if && at("else"))
                        {
                            ++p_;
                            statement();
                        }
                        return;
                    }
                    if (x.text == "for")
                    {
                        ++p_;
                        expect("(");
                        scopes_.emplace_back();
                        if (declaration_start())
                        {
                            declaration(Ctx::Block);
                        }
                        else
                        {
                            expression({";"});
                            expect(";");
                        }
                        expression({";"});
                        expect(";");
                        expression({")"});
                        expect(")");
                        statement();
                        scopes_.pop_back();
                        return;
                    }
                    if (x.text == "do")
                    {
                        ++p_;
                        statement();
                        expect("while");
                        paren_expression();
                        expect(";");
                        return;
                    }
                    if (x.text == "case")
                    {
                        ++p_;
                        expression({":"});
                        expect(":");
                        return;
                    }
                    if (x.text == "default")
                    {
                        ++p_;
                        expect(":");
                        return;
                    }
                    if (x.text == "goto")
                    {
                        ++p_;
                        if (ident())
                        {
                            ++p_;
                        }
                        else
                        {
                            expression({";"});
                        }
                        expect(";");
                        return;
                    }
                    if (x.text == "return")
                    {
                        ++p_;
                        expression({";"});
                        expect(";");
                        return;
                    }
                    if (x.text == "break" || x.text == "continue")
                    {
                        ++p_;
                        expect(";");
                        return;
                    }
                    if (x.text == "asm" || x.text == "__asm__" || x.text == "__asm")
                    {
                        ++p_;
                        while (keyword_in(kQualifiers) || at("goto"))
                        {
                            ++p_;
                        }
                        paren_expression();
                        expect(";");
                        return;
                    }
                }
                if (ident() && at(":", 1))
                {
                    p_ += 2; // label
                    return;
                }
                expression({";"});
                expect(";");
            }

            const std::vector<Token> &t_;
            std::vector<std::size_t> s_;
            std::size_t p_ = 0;
            const std::map<std::string, std::string> &file_virtual_;
            const std::map<std::size_t, std::string> &static_virtual_;
            std::vector<std::unordered_map<std::string, Binding>> scopes_;
            std::string function_;
            std::size_t function_begin_ = 0;
            std::optional<std::size_t> static_init_owner_;
        };

        std::string render_range(const std::vector<Token> &tokens, std::size_t b, std::size_t e)
        {
            std::string out;
            for (std::size_t k = b; k < e && k < tokens.size(); ++k)
            {
                out += tokens[k].text;
            }
            return out;
        }

        bool contains(const std::vector<std::string> &v, const std::string &x)
        {
            return std::find(v.begin(), v.end(), x) != v.end();
        }

        bool zero_initializer(const std::vector<Token> &tokens, std::size_t b, std::size_t e)
        {
            std::vector<std::string> v;
            for (std::size_t k = b; k < e; ++k)
            {
                if (tokens[k].significant())
                {
                    v.push_back(tokens[k].text);
                }
            }
            return v == std::vector<std::string>{"0"} || v == std::vector<std::string>{"NULL"} ||
                   v == std::vector<std::string>{"{", "0", "}"} || v == std::vector<std::string>{"{", "}"};
        }

        struct Edit
        {
            std::optional<std::string> replace;
            std::string before;
            std::string after;
            bool deleted = false;
        };
    }

    std::vector<Declaration> find_globals(const std::vector<Token> &tokens, std::vector<Diagnostic> *diagnostics)
    {
        static const std::map<std::string, std::string> none;
        static const std::map<std::size_t, std::string> none_static;
        Walker w(tokens, none, none_static);
        w.run();
        if (diagnostics)
        {
            diagnostics->insert(diagnostics->end(), w.diags.begin(), w.diags.end());
        }
        return std::move(w.decls);
    }

    void TransformConfig::validate() const
    {
        auto identifier = [](const std::string &s) {
            return !s.empty() && ident_start(s[0]) && std::all_of(s.begin(), s.end(), ident_char);
        };
        if (!identifier(prefix))
        {
            throw Error(Errc::InvalidConfig, "prefix must be a non-empty identifier fragment");
        }
        if (!identifier(init_fn_name))
        {
            throw Error(Errc::InvalidConfig, "init function name must be an identifier");
        }
        const bool numeric = !dim_symbol.empty() && std::all_of(dim_symbol.begin(), dim_symbol.end(), [](char c) {
            return c >= '0' && c <= '9';
        });
        if (!identifier(dim_symbol) && !numeric)
        {
            throw Error(Errc::InvalidConfig, "dimension must be an identifier or a decimal constant");
        }
        std::vector<Diagnostic> d;
        const auto toks = tokenize(accessor, &d);
        int depth = 0;
        bool any = false;
        for (const auto &t : toks)
        {
            if (!t.significant())
            {
                continue;
            }
            any = true;
            if (t.text == "(" || t.text == "[")
            {
                ++depth;
            }
            else if (t.text == ")" || t.text == "]")
            {
                if (--depth < 0)
                {
                    break;
                }
            }
            else if (t.text == ";" || t.text == "{" || t.text == "}" || t.text == ",")
            {
                depth = -1;
                break;
            }
        }
        if (!any || depth != 0)
        {
            throw Error(Errc::InvalidConfig, "accessor '" + accessor + "' is not a balanced expression");
        }
    }

    TransformResult transform(const std::vector<Token> &tokens, const std::vector<Declaration> &decls,
                              const TransformConfig &cfg)
    {
        cfg.validate();
        TransformResult result;

        std::unordered_set<std::string> identifiers;
        for (const auto &t : tokens)
        {
            if (t.kind == TokenKind::Identifier)
            {
                identifiers.insert(t.text);
            }
        }

        auto skip_reason = [&](const Declaration &d, const std::string &report_name,
                               const std::string &new_name) -> std::string {
            if (d.name.rfind(cfg.prefix, 0) == 0)
            {
                return "name already carries prefix '" + cfg.prefix + "' (collision)";
            }
            if (contains(cfg.exclude, d.name) || contains(cfg.exclude, report_name))
            {
                return "excluded";
            }
            const bool included = contains(cfg.include, d.name) || contains(cfg.include, report_name);
            if (!cfg.include.empty() && !included)
            {
                return "not in include list";
            }
            if (d.const_object && !included)
            {
                return "const object";
            }
            if (d.const_object && d.initializer)
            {
                return "const object with initializer";
            }
            if (d.incomplete_array)
            {
                return "array size taken from initializer";
            }
            if (identifiers.count(new_name))
            {
                return "new name " + new_name + " already used in input (collision)";
            }
            return {};
        };

        // Decide what gets virtualized.
        std::map<std::string, std::string> file_virtual;
        std::map<std::size_t, std::string> static_virtual;
        std::vector<std::string> order;
        std::map<std::string, std::string> skipped;
        {
            std::map<std::string, std::vector<const Declaration *>> by_name;
            for (const auto &d : decls)
            {
                if (d.scope != DeclScope::File)
                {
                    continue;
                }
                if (!by_name.count(d.name))
                {
                    order.push_back(d.name);
                }
                by_name[d.name].push_back(&d);
            }
            for (const auto &name : order)
            {
                std::string reason;
                for (const Declaration *d : by_name[name])
                {
                    reason = skip_reason(*d, name, cfg.prefix + name);
                    if (!reason.empty())
                    {
                        break;
                    }
                }
                if (reason.empty())
                {
                    file_virtual[name] = cfg.prefix + name;
                }
                else
                {
                    skipped[name] = reason;
                }
            }

            std::map<std::size_t, std::vector<const Declaration *>> by_stmt;
            std::set<std::string> seen;
            std::map<std::size_t, std::string> reasons;
            for (const auto &d : decls)
            {
                if (d.scope != DeclScope::FunctionStatic)
                {
                    continue;
                }
                const std::string report_name = d.function + "::" + d.name;
                const std::string new_name = cfg.prefix + d.function + "__" + d.name;
                std::string reason = skip_reason(d, report_name, new_name);
                if (reason.empty() && d.type_defined_inline)
                {
                    reason = "type defined inside the function";
                }
                if (reason.empty() && !seen.insert(new_name).second)
                {
                    reason = "duplicate static " + report_name;
                }
                reasons[d.name_token] = reason;
                by_stmt[d.statement_begin].push_back(&d);
            }
            for (const auto &[stmt, group] : by_stmt)
            {
                bool all = true;
                for (const Declaration *d : group)
                {
                    all = all && reasons[d->name_token].empty();
                }
                for (const Declaration *d : group)
                {
                    const std::string report_name = d->function + "::" + d->name;
                    if (all)
                    {
                        static_virtual[d->name_token] = cfg.prefix + d->function + "__" + d->name;
                    }
                    else
                    {
                        const auto &r = reasons[d->name_token];
                        skipped[report_name] = r.empty() ? "shares a declaration with a skipped name" : r;
                    }
                }
            }
        }

        Walker w(tokens, file_virtual, static_virtual);
        w.run();
        result.diagnostics = w.diags;

        for (const auto &r : w.refs)
        {
            if (r.in_static_init)
            {
                const Token &t = tokens[r.token];
                std::string owner = "a static initializer";
                if (*r.in_static_init < w.decls.size())
                {
                    owner = "initializer of " + w.decls[*r.in_static_init].name;
                }
                throw Error(Errc::UnsupportedInitializer, where(t.line, t.col) + ": " + owner +
                                                              " refers to virtualized " + r.name);
            }
        }

        std::vector<Edit> edits(tokens.size());
        std::map<std::string, SymbolReport> reports;
        auto report_for = [&](const std::string &name, const std::string &new_name) -> SymbolReport & {
            auto &rep = reports[name];
            rep.name = name;
            rep.new_name = new_name;
            return rep;
        };

        const std::string subscript = "[" + cfg.accessor + "]";
        for (const auto &r : w.refs)
        {
            edits[r.token].replace = r.new_name + subscript;
            result.reference_sites.push_back(r.token);
        }
        std::sort(result.reference_sites.begin(), result.reference_sites.end());

        std::vector<std::string> init_lines;
        auto init_line = [&](const Declaration &d, const std::string &new_name) {
            const auto [b, e] = *d.initializer;
            const std::string init = render_range(tokens, b, e);
            std::size_t first = b;
            while (first < e && !tokens[first].significant())
            {
                ++first;
            }
            const bool aggregate = !d.dims.empty() || (first < e && tokens[first].text == "{");
            if (!aggregate)
            {
                init_lines.push_back("    " + new_name + "[id] = " + init + ";\n");
                return;
            }
            std::string spec;
            for (std::size_t k = d.spec_begin; k < d.spec_end; ++k)
            {
                if (tokens[k].kind == TokenKind::Keyword && kStorage.count(tokens[k].text))
                {
                    if (k + 1 < d.spec_end && tokens[k + 1].kind == TokenKind::Whitespace)
                    {
                        ++k;
                    }
                    continue;
                }
                spec += tokens[k].text;
            }
            while (!spec.empty() && (spec.back() == ' ' || spec.back() == '\t' || spec.back() == '\n'))
            {
                spec.pop_back();
            }
            std::string decl;
            for (std::size_t k = d.declarator_begin; k < d.declarator_end; ++k)
            {
                decl += k == d.name_token ? std::string("globaliser_tmp") : tokens[k].text;
            }
            std::string block = "    {\n        " + spec + " " + decl + " = " + init + ";\n";
            if (!d.dims.empty())
            {
                block += "        for (unsigned long globaliser_i = 0; globaliser_i < sizeof globaliser_tmp; "
                         "++globaliser_i)\n            ((unsigned char *)" +
                         new_name + "[id])[globaliser_i] = ((const unsigned char *)globaliser_tmp)[globaliser_i];\n";
            }
            else
            {
                block += "        " + new_name + "[id] = globaliser_tmp;\n";
            }
            block += "    }\n";
            init_lines.push_back(block);
        };

        auto edit_declarator = [&](const Declaration &d, const std::string &new_name) {
            edits[d.name_token].replace = new_name;
            edits[d.name_token].after = "[" + cfg.dim_symbol + "]";
            if (d.initializer)
            {
                std::size_t k = d.declarator_end;
                for (; k < d.initializer->second; ++k)
                {
                    edits[k].deleted = true;
                }
                if (!zero_initializer(tokens, d.initializer->first, d.initializer->second))
                {
                    init_line(d, new_name);
                }
            }
        };

        for (const auto &d : w.decls)
        {
            if (d.scope != DeclScope::File)
            {
                continue;
            }
            const auto f = file_virtual.find(d.name);
            if (f == file_virtual.end())
            {
                continue;
            }
            edit_declarator(d, f->second);
            ++report_for(d.name, f->second).declarations;
        }

        // Function statics: rewrite in place, render the statement, then move it
        // in front of the enclosing function.
        std::map<std::size_t, std::vector<const Declaration *>> hoist_groups;
        for (const auto &d : w.decls)
        {
            if (d.scope == DeclScope::FunctionStatic && static_virtual.count(d.name_token))
            {
                hoist_groups[d.statement_begin].push_back(&d);
            }
        }
        for (const auto &[stmt, group] : hoist_groups)
        {
            for (const Declaration *d : group)
            {
                const std::string &nn = static_virtual[d->name_token];
                edit_declarator(*d, nn);
                ++report_for(d->function + "::" + d->name, nn).declarations;
            }
            const Declaration &first = *group.front();
            std::string text;
            for (std::size_t k = first.statement_begin; k <= first.statement_end && k < tokens.size(); ++k)
            {
                const Edit &e = edits[k];
                text += e.before;
                if (!e.deleted)
                {
                    text += e.replace ? *e.replace : tokens[k].text;
                }
                text += e.after;
            }
            for (std::size_t k = first.statement_begin; k <= first.statement_end && k < tokens.size(); ++k)
            {
                edits[k] = Edit{};
                edits[k].deleted = true;
            }
            // Drop the now-empty source line.
            if (first.statement_begin > 0 && first.statement_end + 1 < tokens.size())
            {
                const Token &prev = tokens[first.statement_begin - 1];
                const Token &next = tokens[first.statement_end + 1];
                const auto nl = prev.text.rfind('\n');
                if (prev.kind == TokenKind::Whitespace && nl != std::string::npos &&
                    next.kind == TokenKind::Whitespace && next.text.front() == '\n' &&
                    !edits[first.statement_begin - 1].replace)
                {
                    edits[first.statement_begin - 1].replace = prev.text.substr(0, nl);
                }
            }
            edits[first.function_begin].before += text + "\n\n";
        }

        for (const auto &r : w.refs)
        {
            std::string name = r.name;
            for (const auto &d : w.decls)
            {
                if (d.scope == DeclScope::FunctionStatic && static_virtual.count(d.name_token) &&
                    static_virtual[d.name_token] == r.new_name)
                {
                    name = d.function + "::" + d.name;
                    break;
                }
            }
            ++report_for(name, r.new_name).sites;
        }

        std::string out;
        for (std::size_t k = 0; k < tokens.size(); ++k)
        {
            const Edit &e = edits[k];
            out += e.before;
            if (!e.deleted)
            {
                out += e.replace ? *e.replace : tokens[k].text;
            }
            out += e.after;
        }
        if (!init_lines.empty())
        {
            if (!out.empty() && out.back() != '\n')
            {
                out += '\n';
            }
            out += "\nvoid " + cfg.init_fn_name + "(int id)\n{\n";
            for (const auto &l : init_lines)
            {
                out += l;
            }
            out += "}\n";
        }
        result.output = std::move(out);

        // Report in declaration order.
        std::vector<std::string> names;
        for (const auto &d : w.decls)
        {
            const std::string n = d.scope == DeclScope::File ? d.name : d.function + "::" + d.name;
            if (!contains(names, n))
            {
                names.push_back(n);
            }
        }
        for (const auto &n : names)
        {
            if (const auto it = reports.find(n); it != reports.end())
            {
                result.rewrote.push_back(it->second);
            }
            else if (const auto s = skipped.find(n); s != skipped.end())
            {
                result.diagnostics.push_back({Diagnostic::Kind::Skipped, n, s->second, 0, 0});
            }
        }
        return result;
    }

    std::string TransformResult::report() const
    {
        std::string out;
        for (const auto &r : rewrote)
        {
            out += "REWROTE " + r.name + " " + std::to_string(r.sites) + " sites\n";
        }
        for (const auto &d : diagnostics)
        {
            std::string reason = d.message;
            if (d.line)
            {
                reason += " at " + where(d.line, d.col);
            }
            out += "SKIPPED " + d.name + " " + reason + "\n";
        }
        return out;
    }

    TransformResult globalize_source(std::string_view source, const TransformConfig &config)
    {
        config.validate();
        std::vector<Diagnostic> diags;
        auto tokens = tokenize(source, &diags);
        if (config.strip_comments)
        {
            for (auto &t : tokens)
            {
                if (t.kind == TokenKind::Comment)
                {
                    t.kind = TokenKind::Whitespace;
                    t.text = " ";
                }
            }
        }
        const auto decls = find_globals(tokens);
        TransformResult r = transform(tokens, decls, config);
        r.diagnostics.insert(r.diagnostics.begin(), diags.begin(), diags.end());
        return r;
    }

    TransformResult globalize_file(const std::filesystem::path &in, const std::filesystem::path &out,
                                   const TransformConfig &config)
    {
        std::ifstream is(in, std::ios::binary);
        if (!is)
        {
            throw Error(Errc::Io, "cannot read " + in.string());
        }
        const std::string source((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        TransformResult r = globalize_source(source, config);
        std::ofstream os(out, std::ios::binary | std::ios::trunc);
        if (!os)
        {
            throw Error(Errc::Io, "cannot write " + out.string());
        }
        os << r.output;
        if (!os.flush())
        {
            throw Error(Errc::Io, "write to " + out.string() + " failed");
        }
        return r;
    }
}
