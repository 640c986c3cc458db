int x, y, z;
x = y + 1;
x = x * z;
