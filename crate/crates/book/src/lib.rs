//! Compiles and runs every code listing in the guide under `book/src`.
//!
//! mdbook cannot test listings that depend on a local crate, so each chapter
//! is pulled in here as the docs of an empty module and checked by
//! `cargo test --doc`.

macro_rules! chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            pub mod $name {}
        )*
    };
}

chapters! {
    introduction => "introduction.md",
    mechanism => "mechanism.md",
    privacy => "privacy.md",
    budget => "budget.md",
    environment => "environment.md",
    ppo => "ppo.md",
    student => "student.md",
    experiments => "experiments.md",
}
