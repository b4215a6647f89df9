pub use skinsplat;
