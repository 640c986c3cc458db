//! Printing then parsing gives back the same tree, for programs and for
//! property pragmas.

use proptest::prelude::*;

use stmlforge::annotations::{parse_pragma, Access, Ann, CLocation, Offsets, Parameter, StmlProperty};
use stmlforge::ast::{AssignOp, BinOp, Block, Declarator, Expr, Program, Stmt, StmtKind, Type, UnOp};
use stmlforge::{parse, print};

const KEYWORDS: &[&str] = &[
    "do", "else", "for", "if", "int", "float", "double", "void", "return", "in", "zip", "length", "output", "write",
];

fn ident() -> impl Strategy<Value = String> {
    "[a-h][a-z0-9]{0,3}".prop_filter("keyword", |s| !KEYWORDS.contains(&s.as_str()))
}

fn binop() -> impl Strategy<Value = BinOp> {
    prop::sample::select(vec![
        BinOp::Mul,
        BinOp::Div,
        BinOp::Rem,
        BinOp::Add,
        BinOp::Sub,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::And,
        BinOp::Or,
    ])
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0i64..1000).prop_map(Expr::Int),
        prop::sample::select(vec!["0.5", "2.0", "1e-3", "3.25f"]).prop_map(|s| Expr::Float(s.to_string())),
        ident().prop_map(Expr::Ident),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (binop(), inner.clone(), inner.clone()).prop_map(|(op, l, r)| Expr::binary(op, l, r)),
            (ident(), inner.clone()).prop_map(|(b, i)| Expr::index(b, i)),
            inner.clone().prop_map(|e| Expr::unary(UnOp::Neg, e)),
            inner.clone().prop_map(|e| Expr::unary(UnOp::Not, e)),
            (ident(), prop::collection::vec(inner, 0..3)).prop_map(|(name, args)| Expr::Call { name, args }),
        ]
    })
}

fn lvalue() -> impl Strategy<Value = Expr> {
    prop_oneof![
        ident().prop_map(Expr::Ident),
        (ident(), expr()).prop_map(|(b, i)| Expr::index(b, i))
    ]
}

fn assign_op() -> impl Strategy<Value = AssignOp> {
    prop::sample::select(vec![
        AssignOp::Set,
        AssignOp::Add,
        AssignOp::Sub,
        AssignOp::Mul,
        AssignOp::Div,
    ])
}

fn simple_stmt() -> impl Strategy<Value = Stmt> {
    prop_oneof![
        (assign_op(), lvalue(), expr()).prop_map(|(op, target, value)| Stmt::new(StmtKind::Assign {
            op,
            target,
            value
        })),
        ident().prop_map(|n| Stmt::new(StmtKind::Expr(Expr::unary(UnOp::PostInc, Expr::ident(n))))),
        (
            prop::sample::select(vec![Type::Int, Type::Float, Type::Double]),
            ident(),
            prop::option::of(expr())
        )
            .prop_map(|(ty, name, init)| Stmt::new(StmtKind::Decl {
                ty,
                declarators: vec![Declarator {
                    name,
                    extent: None,
                    init
                }],
            })),
    ]
}

fn stmt() -> impl Strategy<Value = Stmt> {
    simple_stmt().prop_recursive(3, 16, 3, |inner| {
        let body = prop::collection::vec(inner, 1..3).prop_map(Block::new);
        prop_oneof![
            (ident(), expr(), expr(), body.clone()).prop_map(|(i, lo, hi, body)| Stmt::new(StmtKind::For {
                init: Some(Expr::DeclInit {
                    ty: Type::Int,
                    name: i.clone(),
                    value: Box::new(lo),
                }),
                cond: Some(Expr::binary(BinOp::Lt, Expr::ident(i.clone()), hi)),
                step: Some(Expr::unary(UnOp::PostInc, Expr::ident(i))),
                body,
            })),
            (expr(), body.clone(), prop::option::of(body)).prop_map(|(cond, then, els)| Stmt::new(StmtKind::If {
                cond,
                then,
                els
            })),
        ]
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn programs_roundtrip(items in prop::collection::vec(stmt(), 0..5)) {
        let p = Program::new(items);
        let text = print(&p);
        let back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &p, "{}", text);
        prop_assert_eq!(print(&back), text);
    }

    #[test]
    fn properties_roundtrip(prop in property()) {
        let text = Ann::Stml(prop.clone()).pragma_text();
        let back = parse_pragma(&text, 1).map_err(|e| TestCaseError::fail(format!("{e}: {text}")))?;
        prop_assert_eq!(back, vec![Ann::Stml(prop)], "{}", text);
    }
}

fn target() -> impl Strategy<Value = Expr> {
    prop_oneof![
        ident().prop_map(Expr::Ident),
        (ident(), ident()).prop_map(|(b, i)| Expr::index(b, Expr::ident(i))),
    ]
}

fn property() -> impl Strategy<Value = StmlProperty> {
    let offsets = prop::option::of(prop::collection::vec(-3i64..4, 1..4)).prop_map(|o| o.and_then(Offsets::new));
    let access = prop::sample::select(vec![Access::Reads, Access::Writes, Access::Rw]);
    let param = prop_oneof![
        (-5i64..50).prop_map(Parameter::Int),
        ident().prop_map(|n| Parameter::Location(CLocation::Scalar(n))),
        ident().prop_map(|n| Parameter::Symbolic(Expr::binary(BinOp::Sub, Expr::ident(n), Expr::Int(1)))),
    ];
    let op = prop_oneof![
        prop::sample::select(vec!["+".to_string(), "*".to_string(), "-".to_string()]),
        ident()
    ];
    prop_oneof![
        (access.clone(), ident(), offsets).prop_map(|(k, n, o)| StmlProperty::Access(k, Expr::ident(n), o)),
        (access, target()).prop_map(|(k, t)| StmlProperty::Access(k, t, None)),
        ident().prop_map(|n| StmlProperty::Pure(Expr::ident(n))),
        ident().prop_map(|n| StmlProperty::Appears(Expr::ident(n))),
        (ident(), ident()).prop_map(|(a, b)| StmlProperty::SameLength(Expr::ident(a), Expr::ident(b))),
        (param.clone(), param).prop_map(|(a, b)| StmlProperty::IterationSpace(a, b)),
        op.clone().prop_map(StmlProperty::Commutative),
        op.clone().prop_map(StmlProperty::Associative),
        (op.clone(), op).prop_map(|(g, f)| StmlProperty::DistributesOver(g, f)),
        (ident(), ident(), ident(), ident()).prop_map(|(f, x, c, i)| StmlProperty::WriteSetEq(
            Expr::ident(f),
            vec![CLocation::Scalar(x), CLocation::Elem(c, Expr::ident(i))]
        )),
        Just(StmlProperty::IterationIndependent),
    ]
}
