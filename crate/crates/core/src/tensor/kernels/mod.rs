pub(crate) mod conv;
pub(crate) mod dense;
pub(crate) mod pointwise;
pub(crate) mod spatial;
