//! Arithmetic expressions over the coordinates `x1`, `x2`.
//!
//! The language is `+ - * / ^`, parentheses, the functions `sin`, `cos`,
//! `exp` and the constant `pi`. A Unicode minus sign is read as `-`.

use std::fmt;

use meval::{Context, ContextProvider};
use serde::de::{self, Deserialize, Deserializer, Visitor};

use crate::error::Result;
use crate::mesh::{Mesh, NodalField};

#[derive(Clone)]
pub struct Expression {
    source: String,
    expr: meval::Expr,
}

fn context() -> Context<'static> {
    let mut ctx = Context::empty();
    ctx.var("pi", std::f64::consts::PI)
        .func("sin", f64::sin)
        .func("cos", f64::cos)
        .func("exp", f64::exp);
    ctx
}

struct Point<'a> {
    base: &'a Context<'static>,
    x1: f64,
    x2: f64,
}

impl ContextProvider for Point<'_> {
    fn get_var(&self, name: &str) -> Option<f64> {
        match name {
            "x1" => Some(self.x1),
            "x2" => Some(self.x2),
            _ => self.base.get_var(name),
        }
    }

    fn eval_func(&self, name: &str, args: &[f64]) -> Result<f64, meval::FuncEvalError> {
        self.base.eval_func(name, args)
    }
}

impl Expression {
    pub fn parse(source: &str) -> Result<Self, String> {
        let normalized = source.replace('\u{2212}', "-");
        let expr: meval::Expr = normalized.parse().map_err(|e| format!("{e}"))?;
        let ctx = context();
        // Unknown names only surface on evaluation.
        expr.eval_with_context(Point {
            base: &ctx,
            x1: 0.5,
            x2: 0.5,
        })
        .map_err(|e| format!("{e}"))?;
        Ok(Self {
            source: source.to_string(),
            expr,
        })
    }

    pub fn constant(value: f64) -> Self {
        Self::parse(&format!("{value:e}")).expect("a float literal parses")
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn eval(&self, x1: f64, x2: f64) -> f64 {
        let ctx = context();
        self.eval_in(&ctx, x1, x2)
    }

    fn eval_in(&self, ctx: &Context<'static>, x1: f64, x2: f64) -> f64 {
        self.expr
            .eval_with_context(Point { base: ctx, x1, x2 })
            .unwrap_or(f64::NAN)
    }

    /// Nodal values; fails with the first node where the value is not finite.
    pub fn on_mesh(&self, mesh: &Mesh) -> Result<NodalField> {
        let ctx = context();
        mesh.interpolate(|x1, x2| self.eval_in(&ctx, x1, x2))
    }
}

impl fmt::Debug for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expression({:?})", self.source)
    }
}

impl<'de> Deserialize<'de> for Expression {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct ExprVisitor;

        impl Visitor<'_> for ExprVisitor {
            type Value = Expression;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an expression string or a number")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Expression, E> {
                Expression::parse(v).map_err(|m| E::custom(format!("bad expression {v:?}: {m}")))
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Expression, E> {
                Ok(Expression::constant(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Expression, E> {
                Ok(Expression::constant(v as f64))
            }
        }

        deserializer.deserialize_any(ExprVisitor)
    }
}
