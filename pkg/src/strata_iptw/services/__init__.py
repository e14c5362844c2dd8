"""Services orchestrating analyses and rendering reports."""
