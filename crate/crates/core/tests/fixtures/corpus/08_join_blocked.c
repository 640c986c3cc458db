int x, y;
x = x + 1;
y = x;
x = x * 2;
