//! A minimal tree-walking evaluator for one-argument integer functions,
//! standing in for an interpreted host language.
//!
//! Functions are looked up by name at every call and values are
//! arbitrary-precision [`HostValue`] integers.

use std::collections::HashMap;

use ffibridge::HostValue;
use num_bigint::BigInt;

use crate::{Error, Result};

#[derive(Clone, Debug)]
pub(crate) enum Expr {
    Arg,
    Int(i64),
    Less(Box<Expr>, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(String, Box<Expr>),
}

#[derive(Default)]
pub(crate) struct Interpreter {
    functions: HashMap<String, Expr>,
}

fn integer(v: &HostValue) -> Result<&BigInt> {
    v.as_integer()
        .ok_or_else(|| Error::InvalidInput(format!("expected an integer, got {v}")))
}

impl Interpreter {
    pub(crate) fn define(&mut self, name: &str, body: Expr) {
        self.functions.insert(name.to_string(), body);
    }

    pub(crate) fn call(&self, name: &str, arg: HostValue) -> Result<HostValue> {
        let body = self
            .functions
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("undefined function {name}")))?;
        self.eval(body, &arg)
    }

    fn eval(&self, e: &Expr, arg: &HostValue) -> Result<HostValue> {
        Ok(match e {
            Expr::Arg => arg.clone(),
            Expr::Int(v) => HostValue::from(*v),
            Expr::Less(a, b) => {
                let less = integer(&self.eval(a, arg)?)? < integer(&self.eval(b, arg)?)?;
                HostValue::from(i32::from(less))
            }
            Expr::Add(a, b) => {
                HostValue::Integer(integer(&self.eval(a, arg)?)? + integer(&self.eval(b, arg)?)?)
            }
            Expr::Sub(a, b) => {
                HostValue::Integer(integer(&self.eval(a, arg)?)? - integer(&self.eval(b, arg)?)?)
            }
            Expr::If(c, t, f) => {
                if self.eval(c, arg)?.is_zero() {
                    self.eval(f, arg)?
                } else {
                    self.eval(t, arg)?
                }
            }
            Expr::Call(name, a) => self.call(name, self.eval(a, arg)?)?,
        })
    }
}

/// `fibonacci1 = n -> if n < 2 then n else fibonacci1(n - 1) + fibonacci1(n - 2)`
pub(crate) fn fibonacci_program() -> Interpreter {
    use Expr::*;
    let b = Box::new;
    let recurse = |k| Call("fibonacci1".into(), b(Sub(b(Arg), b(Int(k)))));
    let body = If(
        b(Less(b(Arg), b(Int(2)))),
        b(Arg),
        b(Add(b(recurse(1)), b(recurse(2)))),
    );
    let mut interp = Interpreter::default();
    interp.define("fibonacci1", body);
    interp
}
