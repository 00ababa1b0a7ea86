#pragma once

// Static virtualization of preprocessed C source: file-scope and
// function-static objects become per-stack arrays indexed by the active stack
// id, and every unshadowed reference becomes an indexed access.
//
//   struct uip_conn *uip_conn;   ->  struct uip_conn *global_uip_conn[NUM_STACKS];
//   uip_conn = NULL;             ->  global_uip_conn[get_stack_id()] = NULL;
//
// The scanner is grammar-free: declarations and statements are recognized by
// a small recursive walker with brace/parameter scope tracking. Anything it
// cannot classify is reported and left untouched.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace nsc::glob
{
    enum class TokenKind
    {
        Identifier,
        Keyword,
        Number,
        String,
        Char,
        Punctuator,
        Whitespace,
        Comment,
    };

    const char *token_kind_name(TokenKind kind) noexcept;

    struct Token
    {
        TokenKind kind = TokenKind::Whitespace;
        std::string text;
        std::uint32_t line = 1;
        std::uint32_t col = 1;

        bool significant() const { return kind != TokenKind::Whitespace && kind != TokenKind::Comment; }
    };

    struct Diagnostic
    {
        enum class Kind
        {
            ParseAmbiguity,
            Directive,
            Skipped,
        };

        Kind kind = Kind::Skipped;
        std::string name;
        std::string message;
        std::uint32_t line = 0;
        std::uint32_t col = 0;
    };

    bool is_keyword(std::string_view word);

    /// Lossless: concatenated token texts equal `source`. `#` line markers and
    /// other directive lines become whitespace tokens (the latter with a
    /// Directive diagnostic). Throws UnterminatedString / UnterminatedComment.
    std::vector<Token> tokenize(std::string_view source, std::vector<Diagnostic> *diagnostics = nullptr);

    enum class Storage
    {
        None,
        Static,
        Extern,
    };

    enum class DeclScope
    {
        File,
        FunctionStatic,
    };

    /// One object declarator. Token positions index the token vector.
    struct Declaration
    {
        std::string name;
        std::size_t name_token = 0;
        /// Declaration specifiers, [begin, end).
        std::size_t spec_begin = 0, spec_end = 0;
        /// Declarator, [begin, end).
        std::size_t declarator_begin = 0, declarator_end = 0;
        int pointer_depth = 0;
        std::vector<std::pair<std::size_t, std::size_t>> dims;
        Storage storage = Storage::None;
        /// Initializer expression [begin, end), excluding the `=`.
        std::optional<std::pair<std::size_t, std::size_t>> initializer;
        DeclScope scope = DeclScope::File;
        /// Enclosing function for function statics.
        std::string function;
        std::size_t function_begin = 0;
        /// Whole declaration statement, [begin, end] including the `;`.
        std::size_t statement_begin = 0, statement_end = 0;
        bool const_object = false;
        bool type_defined_inline = false;
        /// `name[]`, size left to the initializer.
        bool incomplete_array = false;
        std::uint32_t line = 0, col = 0;
    };

    std::vector<Declaration> find_globals(const std::vector<Token> &tokens,
                                          std::vector<Diagnostic> *diagnostics = nullptr);

    struct TransformConfig
    {
        std::string dim_symbol = "NUM_STACKS";
        std::string accessor = "get_stack_id()";
        std::string prefix = "global_";
        /// When non-empty, only these names are virtualized (overrides the const rule).
        std::vector<std::string> include;
        std::vector<std::string> exclude;
        std::string init_fn_name = "globaliser_init_globals";
        /// Replace each comment by one space first, as the C preprocessor would.
        bool strip_comments = false;

        /// Throws InvalidConfig.
        void validate() const;
    };

    struct SymbolReport
    {
        /// Source name; function statics are reported as fn::name.
        std::string name;
        std::string new_name;
        std::size_t sites = 0;
        std::size_t declarations = 0;
    };

    struct TransformResult
    {
        std::string output;
        std::vector<SymbolReport> rewrote;
        std::vector<Diagnostic> diagnostics;
        /// Token indices of rewritten reference sites, ascending.
        std::vector<std::size_t> reference_sites;

        std::size_t transformed() const { return rewrote.size(); }
        /// REWROTE / SKIPPED lines.
        std::string report() const;
    };

    /// Throws UnsupportedInitializer when a static-storage initializer refers
    /// to a virtualized object.
    TransformResult transform(const std::vector<Token> &tokens, const std::vector<Declaration> &decls,
                              const TransformConfig &config);

    /// tokenize, find_globals, transform.
    TransformResult globalize_source(std::string_view source, const TransformConfig &config);

    /// Writes `out` only on success. Throws on any error before writing.
    TransformResult globalize_file(const std::filesystem::path &in, const std::filesystem::path &out,
                                   const TransformConfig &config);
}
