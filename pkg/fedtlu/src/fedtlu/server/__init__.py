"""Server-side aggregation, scoring, block selection and schedules."""
