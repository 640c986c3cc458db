float c[N], d[N], v[N], a, b;
#pragma polca map SCALE v c
for (int i = 0; i < N; i++)
    c[i] = v[i] * (a + b);
#pragma polca map SHIFT c d
for (int i = 0; i < N; i++)
    d[i] = c[i] + a;
