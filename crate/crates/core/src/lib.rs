pub mod cmdp;
pub mod domains;
pub mod error;
pub mod game;
pub mod mdp;
pub mod mixed;
pub mod nash;
pub mod normal_form;
pub mod pomdp;
pub mod report;
pub mod spec;
pub mod strategy;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/games.md")]
    mod games {}
    #[doc = include_str!("../../../book/src/best_response.md")]
    mod best_response {}
    #[doc = include_str!("../../../book/src/nash.md")]
    mod nash {}
    #[doc = include_str!("../../../book/src/mixed.md")]
    mod mixed {}
    #[doc = include_str!("../../../book/src/cmdp.md")]
    mod cmdp {}
    #[doc = include_str!("../../../book/src/domains.md")]
    mod domains {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../README.md")]
    mod readme {}
}
