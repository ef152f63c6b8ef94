# lark grammar for scenario files: a small TOML-like key/value language
GRAMMAR = """
        document           : _NL? (statement (_NL statement)*)? _NL?

        ?statement         : table_header | array_table_header | assignment

        // [plant]  [cost.schedule]
        table_header       : "[" dotted_key "]"
        // [[cost.obstacles]]; written as two brackets so it never collides with nested arrays
        array_table_header : "[" "[" dotted_key "]" "]"
        assignment         : dotted_key "=" value

        dotted_key         : IDENTIFIER ("." IDENTIFIER)*

        ?value             : number | string | boolean | array
        number             : SIGNED_NUMBER
        string             : ESCAPED_STRING
        boolean            : TRUE | FALSE
        // arrays may span lines and carry a trailing comma
        array              : "[" _NL? "]"
                           | "[" _NL? value (_NL? "," _NL? value)* (_NL? ",")? _NL? "]"

        TRUE               : "true"
        FALSE              : "false"
        IDENTIFIER         : /[A-Za-z_][A-Za-z0-9_]*/

        // a newline swallows following blank and comment-only lines
        _NL                : /(\\r?\\n[\\t ]*(#[^\\r\\n]*)?)+/
        COMMENT            : /#[^\\r\\n]*/

        // ref: https://github.com/lark-parser/lark/blob/master/lark/grammars/common.lark
        %import common.ESCAPED_STRING
        %import common.SIGNED_NUMBER
        %import common.WS_INLINE
        %ignore WS_INLINE
        %ignore COMMENT
"""
