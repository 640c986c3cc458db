float r, a, b, c;
r = a * c - b * c;
